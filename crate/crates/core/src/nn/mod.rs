//! Layer building blocks and the builder that allocates them.

mod builder;
mod layers;
mod spec;

pub use builder::{Builder, ConvCfg, Init};
pub use layers::{BatchNorm, Conv, DsConv, Linear};
pub use spec::{LayerKind, LayerSpec};

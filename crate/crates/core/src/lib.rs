pub mod autograd;
pub mod cost;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

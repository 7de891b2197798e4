#![allow(dead_code)]

pub mod correlation;
pub mod metrics_oracle;

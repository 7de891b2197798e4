//! Reverse-mode differentiation over a recorded tape, plus the parameter store
//! and the finite-difference gradient checker used to verify it.

mod gradcheck;
mod graph;
mod params;
mod suite;

pub use gradcheck::{
    grad_check, rel_err, GradCheckOptions, GradCheckReport, ParamCheck, DEFAULT_EPS, DEFAULT_FLOOR,
    DEFAULT_SAMPLES,
};
pub use graph::{Graph, Var};
pub use params::{Buffer, BufferId, Gradients, ParamId, ParamStore, Parameter};
pub use suite::{primitive_cases, primitive_checks, PrimitiveCase, PrimitiveResult};

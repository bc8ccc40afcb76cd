//! Dense tensors, reverse-mode differentiation and gradient checking.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Graph, Mask, Var};
pub use params::{GradVector, ParamStore};
pub use tensor::Tensor;

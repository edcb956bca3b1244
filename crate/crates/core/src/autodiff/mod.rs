//! Minimal reverse-mode differentiable tensor engine.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod init;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{analytic_grads, compare_with_numeric, grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{softmax_in_place, Gradients, Graph, Var};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{gemm, Real, Tensor};

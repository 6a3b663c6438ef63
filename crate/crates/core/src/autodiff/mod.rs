//! Reverse-mode automatic differentiation over dense tensors.

mod graph;
mod kernels;
mod numeric;

pub use graph::{meter, CustomOp, GradSink, GradStore, Graph, Var};
pub use numeric::{numeric_grad, numeric_grad_at, relative_error};

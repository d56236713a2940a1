//! Tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Eval, Gradients, Graph, ParamId, Tape, Unary, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

/// Mean squared error of two equally shaped tensors.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64, NnError> {
    Eval.mse(pred, target).map(|t| t.item())
}

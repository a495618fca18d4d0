//! Dense `f64` tensors with tape-based reverse-mode differentiation, the
//! Adam optimizer and a named-tensor file container.

mod adam;
pub mod checkpoint;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use tape::{Gradients, Tape, Var, NEG_INF};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimizer state error: {0}")]
    State(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

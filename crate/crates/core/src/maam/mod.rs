//! Attention encoder over depot and customers, and a round-robin decoder
//! that lets each vehicle pick one customer per step.

mod decoder;
mod encoder;
mod params;
#[cfg(test)]
mod tests;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::problem::ProblemError;

pub use decoder::{
    draw, rollout, rollout_traced, rollout_with_gradients, DecodeMode, Decoder, DecoderState, RolloutResult, Step,
};
pub use encoder::{
    attention_layer, embed_inputs, encode, encode_with_depth, node_features, EncoderOutput, LayerOutput,
};
pub use params::{ModelConfig, ModelParams, NODE_FEATURES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("instance has {found} vehicles but the model was built for {expected}")]
    FleetMismatch { expected: usize, found: usize },
    #[error("every vehicle is retired with {unvisited} customers unvisited")]
    InfeasibleDecode { unvisited: usize },
    #[error("forced action {action} at step {step} is not available")]
    ForcedAction { step: usize, action: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

//! Micro encoder-decoder transformer with fact-aware role embeddings.
//!
//! Encoder inputs are `token_emb + pos_emb + role_emb`; the decoder sees token and position
//! embeddings only. Blocks are pre-layer-norm with GELU feed-forward layers. All arithmetic
//! is `f64` so gradients can be checked against finite differences.

mod beam;
mod checkpoint;
mod matrix;
mod params;
mod tape;
mod transformer;

pub use beam::{beam_decode, greedy_decode, BeamConfig, Hypothesis, StepScorer};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use matrix::Matrix;
pub use params::{init_model, Gradients, ModelConfig, ModelParams};
pub use transformer::{
    forward, forward_example, loss_and_grads, loss_and_grads_with, Batch, EncodedSource, Logits, Mode,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("batch is malformed: {0}")]
    BadBatch(String),
    #[error("batch has no non-pad target positions")]
    AllPad,
    #[error("beam width must be at least 1")]
    ZeroWidth,
    #[error("gradient shape mismatch for tensor {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

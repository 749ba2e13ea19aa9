//! A small encoder with two parallel decoders, trained from scratch.
//!
//! Learned object queries decode detection boxes; track queries (embeddings
//! of objects found on the previous frame) decode tracking boxes. Both
//! decoders attend to one memory built from the current and previous
//! frame's feature grids. Gradients come from a small reverse-mode tape.

mod checkpoint;
mod eval;
mod model;
mod provider;
pub mod tape;
mod train;

pub use checkpoint::{from_bytes, load, read_checkpoint, save, to_bytes, write_checkpoint, MAGIC, VERSION};
pub use eval::{evaluate_pairs, track_pair};
pub use model::{attention, position_encoding, DecodeOut, DecodeVars, FrameForward, Graph, ModelConfig, ModelParams, CLASS_PRIOR};
pub use provider::ToyNetProvider;
pub use tape::Mat;
pub use train::{
    dataset_loss, first_frame_queries, grad_check, gradcheck_pair, ground_truth, pair_loss, predictions, relative_error, sample_loss,
    stationary_heads, train_toy, train_toy_with, DatasetSpec, GradCheckReport, LinearHeads, MatchStrategy, Optimizer, SampleLoss, TrainConfig,
    TrainPair, TrainReport,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToyNetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model setting: {0}")]
    Config(String),
    #[error("{}", match .epoch { Some(e) => format!("loss is not finite at epoch {e}"), None => "loss is not finite".to_string() })]
    NonFinite { epoch: Option<usize> },
    #[error("tracking failed: {0}")]
    Tracking(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

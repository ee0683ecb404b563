//! Neural substrate: parameter storage, a reverse-mode tape, the recurrent
//! and attention layers built on it, Adam, and versioned checkpoints.

use std::io;

use thiserror::Error;

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use gradcheck::{check_all, GradcheckReport};
pub use graph::{entropy_of_logits, log_softmax, softmax, Adjoints, Graph, Var};
pub use layers::{positional_encoding, BiRnn, Dense, Embedding, Gru, Pointer, SoftmaxHead};
pub use params::{
    load_checkpoint, save_checkpoint, Checkpoint, Gradients, Param, ParamId, ParamStore,
    StoreSnapshot, SubstrateConfig, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("token id {0} outside the vocabulary")]
    IdOutOfRange(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

//! The chat translation model: composite embeddings, an encoder whose
//! upper layers keep context and current-utterance positions apart, a
//! causal decoder with gated cross-attention, three generation heads,
//! and two binary classifier heads.

mod checkpoint;
mod config;
mod masks;
mod params;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadManifest};
pub use config::{ModelConfig, LN_EPS};
pub use masks::{cross_attention_mask, decoder_self_mask, encoder_self_mask, AttnMask, NEG_BIG};
pub use params::{ModelParams, Param};
pub use transformer::{BoundModel, ClsHead, EncoderOutput, GenHead, RunMode};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    BadConfig(String),

    #[error("input length {len} exceeds max_pos {max}")]
    TooLong { len: usize, max: usize },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("cross-attention has no visible encoder positions")]
    EmptyCrossAttention,

    #[error("encoder input does not start with [cls]")]
    MissingCls,

    #[error("empty pooling span")]
    EmptySpan,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),

    #[error("checkpoint holds unknown parameter {0}")]
    UnknownParam(String),

    #[error("parameter {name}: expected shape {expected:?}, found {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error(transparent)]
    Tensor(#[from] autodiff::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ModelResult<T> = std::result::Result<T, ModelError>;

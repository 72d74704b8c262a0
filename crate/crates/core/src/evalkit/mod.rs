//! Translation quality metrics: corpus BLEU, TER, and a dialogue
//! coherence score based on word-vector similarity.
//!
//! All metrics take pre-tokenized input; casing and tokenization are
//! the caller's concern. The coherence report compares each
//! translation against the reference target-side history, so numbers
//! stay comparable across systems translating the same test set.

mod bleu;
mod coherence;
mod ter;

pub use bleu::{corpus_bleu, BleuReport, Smoothing};
pub use coherence::{
    coherence_report, coherence_sim, CoherenceReport, CoherenceRow, WordVectorTable,
};
pub use ter::{levenshtein, ter, TerOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(String),

    #[error("mismatched input: {0}")]
    Mismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad metric config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type EvalResult<T> = Result<T, EvalError>;

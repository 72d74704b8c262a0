//! Speaker- and coherence-aware neural chat translation: corpus handling,
//! the gated context transformer, training objectives, optimization,
//! decoding, and evaluation metrics.
//!
//! The crate is organized as a pipeline. `corpus` turns dialogue files
//! into annotated training examples; `model` binds parameters onto an
//! autodiff tape and runs the encoder/decoder; `objectives` computes the
//! per-task losses and their scheduled combination; `trainer` drives the
//! two training stages; `inference` decodes, and `evalkit` scores.

pub mod corpus;
pub mod evalkit;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod trainer;

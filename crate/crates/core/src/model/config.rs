//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Epsilon inside every layer-norm denominator.
pub const LN_EPS: autodiff::Real = 1e-6;

/// Architecture hyperparameters. `vocab_size` is normally filled in from
/// the vocabulary file rather than written by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder and decoder layer count.
    pub layers: usize,
    /// Hidden size d.
    pub d_model: usize,
    /// Feed-forward inner size.
    pub d_ff: usize,
    /// Attention head count; must divide `d_model`.
    pub heads: usize,
    #[serde(default)]
    pub vocab_size: usize,
    /// Turn embedding rows; turn ids clip to `max_turns - 1`.
    pub max_turns: usize,
    /// Positional embedding rows; inputs longer than this are rejected.
    pub max_pos: usize,
    pub dropout: autodiff::Real,
    /// Reuse the main generation head for the auxiliary generation tasks.
    #[serde(default)]
    pub share_aux_heads_with_main: bool,
    /// Let decoder cross-attention see context positions too, instead of
    /// only the current utterance.
    #[serde(default)]
    pub attend_all_cross: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            d_model: 512,
            d_ff: 2048,
            heads: 8,
            vocab_size: 0,
            max_turns: 10,
            max_pos: 512,
            dropout: 0.1,
            share_aux_heads_with_main: false,
            attend_all_cross: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 {
            return Err(ModelError::BadConfig("layers must be at least 1".into()));
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return Err(ModelError::BadConfig(
                "d_model and d_ff must be positive".into(),
            ));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::BadConfig(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.vocab_size < crate::corpus::RESERVED.len() {
            return Err(ModelError::BadConfig(format!(
                "vocab_size ({}) must cover the {} reserved tokens",
                self.vocab_size,
                crate::corpus::RESERVED.len()
            )));
        }
        if self.max_turns == 0 {
            return Err(ModelError::BadConfig("max_turns must be at least 1".into()));
        }
        if self.max_pos == 0 {
            return Err(ModelError::BadConfig("max_pos must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

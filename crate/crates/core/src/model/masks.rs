//! Attention masks as explicit boolean matrices.
//!
//! Masks are built structurally (which query may see which key) and only
//! converted to additive form at the point of use. Blocked positions get
//! a large negative constant rather than negative infinity so softmax
//! never sees NaN-producing arithmetic.

use autodiff::{Real, Result as TensorResult, Tape, Tensor};

use super::{ModelError, ModelResult};

/// Additive penalty for blocked attention edges.
pub const NEG_BIG: Real = -1e30;

/// A query-by-key visibility matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMask {
    pub queries: usize,
    pub keys: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(allowed.len(), queries * keys, "mask size mismatch");
        AttnMask {
            queries,
            keys,
            allowed,
        }
    }

    pub fn full(queries: usize, keys: usize) -> Self {
        Self::new(queries, keys, vec![true; queries * keys])
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    /// Constant tensor with 0 on allowed edges and [`NEG_BIG`] on
    /// blocked ones, for adding to attention scores.
    pub fn to_additive(&self, tape: &Tape) -> TensorResult<Tensor> {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { NEG_BIG })
            .collect();
        tape.constant(data, &[self.queries, self.keys])
    }
}

/// Encoder self-attention mask for a layer (0-indexed). The first layer
/// sees everything; upper layers confine attention within each segment:
/// current-utterance positions see only current-utterance positions and
/// context positions only context positions.
pub fn encoder_self_mask(flags: &[bool], layer: usize) -> AttnMask {
    let n = flags.len();
    if layer == 0 {
        return AttnMask::full(n, n);
    }
    let mut allowed = vec![false; n * n];
    for q in 0..n {
        for k in 0..n {
            allowed[q * n + k] = flags[q] == flags[k];
        }
    }
    AttnMask::new(n, n, allowed)
}

/// Causal mask: position t sees positions 0..=t.
pub fn decoder_self_mask(len: usize) -> AttnMask {
    let mut allowed = vec![false; len * len];
    for q in 0..len {
        for k in 0..=q {
            allowed[q * len + k] = true;
        }
    }
    AttnMask::new(len, len, allowed)
}

/// Cross-attention mask: every decoder position sees the encoder
/// positions whose segment flag is true (the current utterance), or all
/// positions when `attend_all` is set. Errors when nothing is visible.
pub fn cross_attention_mask(
    flags: &[bool],
    queries: usize,
    attend_all: bool,
) -> ModelResult<AttnMask> {
    let n = flags.len();
    if attend_all {
        return Ok(AttnMask::full(queries, n));
    }
    if !flags.iter().any(|&f| f) {
        return Err(ModelError::EmptyCrossAttention);
    }
    let mut allowed = vec![false; queries * n];
    for q in 0..queries {
        for k in 0..n {
            allowed[q * n + k] = flags[k];
        }
    }
    Ok(AttnMask::new(queries, n, allowed))
}

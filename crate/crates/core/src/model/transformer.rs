//! Binding parameters onto a tape and running the model.
//!
//! A `BoundModel` is one forward-capable view of the parameters: every
//! array becomes a tape leaf (trainable) or constant (frozen), and all
//! paths — translation, context-conditioned generation, and the two
//! classifiers — run through the same encoder and decoder stacks.
//!
//! Layers are post-norm: `x = LayerNorm(x + Dropout(Sublayer(x)))`.
//! Dropout applies to the embedding sum and to each sublayer output;
//! attention weights themselves are not dropped.

use std::collections::HashMap;

use autodiff::{Real, Result as TensorResult, Tape, Tensor};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, LN_EPS};
use super::masks::{cross_attention_mask, decoder_self_mask, encoder_self_mask, AttnMask};
use super::params::ModelParams;
use super::{ModelError, ModelResult};
use crate::corpus::{EncoderInput, CLS_ID};

/// Forward-pass mode: evaluation, or training with dropout driven by an
/// explicit generator.
pub enum RunMode<'a> {
    Eval,
    Train {
        dropout: Real,
        rng: &'a mut ChaCha8Rng,
    },
}

/// Generation heads: translation, and the two context-conditioned
/// reconstruction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenHead {
    Main,
    Mrg,
    Crg,
}

/// Binary classifier heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClsHead {
    Nud,
    Si,
}

/// Top-layer encoder states plus the segment layout they were built
/// with.
pub struct EncoderOutput {
    pub states: Tensor,
    pub flags: Vec<bool>,
    pub ids: Vec<usize>,
}

pub struct BoundModel<'p> {
    params: &'p ModelParams,
    tape: Tape,
    tensors: HashMap<String, Tensor>,
}

impl<'p> BoundModel<'p> {
    /// Bind every parameter as a trainable leaf.
    pub fn bind(params: &'p ModelParams, tape: &Tape) -> ModelResult<Self> {
        Self::bind_inner(params, tape, true)
    }

    /// Bind every parameter as a constant: no gradients, for inference.
    pub fn bind_frozen(params: &'p ModelParams, tape: &Tape) -> ModelResult<Self> {
        Self::bind_inner(params, tape, false)
    }

    fn bind_inner(params: &'p ModelParams, tape: &Tape, trainable: bool) -> ModelResult<Self> {
        let mut tensors = HashMap::new();
        for p in params.iter() {
            let t = if trainable {
                tape.leaf(p.data.clone(), &p.shape)?
            } else {
                tape.constant(p.data.clone(), &p.shape)?
            };
            tensors.insert(p.name.clone(), t);
        }
        Ok(BoundModel {
            params,
            tape: tape.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// The bound tensor for a parameter name. Panics on unknown names:
    /// every name used here is created by the parameter store.
    pub fn tensor(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    fn dropped(&self, x: Tensor, mode: &mut RunMode) -> TensorResult<Tensor> {
        match mode {
            RunMode::Eval => Ok(x),
            RunMode::Train { dropout, rng } => x.dropout(*dropout, rng),
        }
    }

    fn position_rows(&self, len: usize) -> TensorResult<Tensor> {
        let d = self.config().d_model;
        let data = self.params.positions()[..len * d].to_vec();
        self.tape.constant(data, &[len, d])
    }

    fn check_len(&self, len: usize) -> ModelResult<()> {
        if len == 0 {
            return Err(ModelError::EmptySequence);
        }
        let max = self.config().max_pos;
        if len > max {
            return Err(ModelError::TooLong { len, max });
        }
        Ok(())
    }

    // ── Embeddings ──────────────────────────────────────────────────

    /// Encoder embedding: word + position + speaker + turn rows summed,
    /// with turn ids clipped to the table size.
    pub fn embed_encoder(&self, input: &EncoderInput, mode: &mut RunMode) -> ModelResult<Tensor> {
        self.check_len(input.len())?;
        let clip = self.config().max_turns - 1;
        let turns: Vec<usize> = input.turns.iter().map(|&t| t.min(clip)).collect();

        let we = self.tensor("embed.word").gather_rows(&input.ids)?;
        let pe = self.position_rows(input.len())?;
        let se = self.tensor("embed.speaker").gather_rows(&input.speakers)?;
        let te = self.tensor("embed.turn").gather_rows(&turns)?;
        let sum = we.add(&pe)?.add(&se)?.add(&te)?;
        Ok(self.dropped(sum, mode)?)
    }

    /// Decoder embedding: word + position rows only.
    pub fn embed_decoder(&self, ids: &[usize], mode: &mut RunMode) -> ModelResult<Tensor> {
        self.check_len(ids.len())?;
        let we = self.tensor("embed.word").gather_rows(ids)?;
        let pe = self.position_rows(ids.len())?;
        let sum = we.add(&pe)?;
        Ok(self.dropped(sum, mode)?)
    }

    // ── Sublayers ───────────────────────────────────────────────────

    fn attention(
        &self,
        prefix: &str,
        queries: &Tensor,
        keys: &Tensor,
        mask: &AttnMask,
    ) -> TensorResult<Tensor> {
        let get = |part: &str| self.tensor(&format!("{prefix}.{part}"));
        let q = queries.matmul(get("wq"))?.add_bias(get("bq"))?;
        let k = keys.matmul(get("wk"))?.add_bias(get("bk"))?;
        let v = keys.matmul(get("wv"))?.add_bias(get("bv"))?;

        let dk = self.config().head_dim();
        let scale = 1.0 / (dk as Real).sqrt();
        let additive = mask.to_additive(&self.tape)?;

        let mut heads = Vec::with_capacity(self.config().heads);
        for h in 0..self.config().heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = q.slice_cols(lo, hi)?;
            let kh = k.slice_cols(lo, hi)?;
            let vh = v.slice_cols(lo, hi)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale).add(&additive)?;
            let att = scores.softmax_rows()?;
            heads.push(att.matmul(&vh)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        let merged = Tensor::concat_cols(&refs)?;
        merged.matmul(get("wo"))?.add_bias(get("bo"))
    }

    fn feed_forward(&self, prefix: &str, x: &Tensor) -> TensorResult<Tensor> {
        let get = |part: &str| self.tensor(&format!("{prefix}.{part}"));
        x.matmul(get("w1"))?
            .add_bias(get("b1"))?
            .relu()
            .matmul(get("w2"))?
            .add_bias(get("b2"))
    }

    fn residual_norm(
        &self,
        norm_prefix: &str,
        x: &Tensor,
        sublayer: Tensor,
        mode: &mut RunMode,
    ) -> TensorResult<Tensor> {
        let get = |part: &str| self.tensor(&format!("{norm_prefix}.{part}"));
        let dropped = self.dropped(sublayer, mode)?;
        x.add(&dropped)?.layer_norm(get("gain"), get("bias"), LN_EPS)
    }

    // ── Stacks ──────────────────────────────────────────────────────

    /// Run the encoder over an embedded-and-flagged input.
    pub fn encode(&self, input: &EncoderInput, mode: &mut RunMode) -> ModelResult<EncoderOutput> {
        let mut x = self.embed_encoder(input, mode)?;
        for l in 0..self.config().layers {
            let mask = encoder_self_mask(&input.flags, l);
            let att = self.attention(&format!("enc.{l}.att"), &x, &x, &mask)?;
            x = self.residual_norm(&format!("enc.{l}.att_norm"), &x, att, mode)?;
            let ffn = self.feed_forward(&format!("enc.{l}.ffn"), &x)?;
            x = self.residual_norm(&format!("enc.{l}.ffn_norm"), &x, ffn, mode)?;
        }
        Ok(EncoderOutput {
            states: x,
            flags: input.flags.clone(),
            ids: input.ids.clone(),
        })
    }

    /// Run the decoder over a target prefix against encoder output.
    /// Cross-attention sees only flagged (current-utterance) encoder
    /// positions unless the config opens it up.
    pub fn decode(
        &self,
        prefix: &[usize],
        enc: &EncoderOutput,
        mode: &mut RunMode,
    ) -> ModelResult<Tensor> {
        let mut x = self.embed_decoder(prefix, mode)?;
        let t = prefix.len();
        let self_mask = decoder_self_mask(t);
        let cross_mask = cross_attention_mask(&enc.flags, t, self.config().attend_all_cross)?;
        for l in 0..self.config().layers {
            let sa = self.attention(&format!("dec.{l}.self"), &x, &x, &self_mask)?;
            x = self.residual_norm(&format!("dec.{l}.self_norm"), &x, sa, mode)?;
            let ca = self.attention(&format!("dec.{l}.cross"), &x, &enc.states, &cross_mask)?;
            x = self.residual_norm(&format!("dec.{l}.cross_norm"), &x, ca, mode)?;
            let ffn = self.feed_forward(&format!("dec.{l}.ffn"), &x)?;
            x = self.residual_norm(&format!("dec.{l}.ffn_norm"), &x, ffn, mode)?;
        }
        Ok(x)
    }

    // ── Heads ───────────────────────────────────────────────────────

    /// Vocabulary logits for decoder states through one generation head.
    /// With `share_aux_heads_with_main` every head resolves to the main
    /// one.
    pub fn project(&self, states: &Tensor, head: GenHead) -> TensorResult<Tensor> {
        let prefix = if self.config().share_aux_heads_with_main {
            "head.main"
        } else {
            match head {
                GenHead::Main => "head.main",
                GenHead::Mrg => "aux.mrg",
                GenHead::Crg => "aux.crg",
            }
        };
        states
            .matmul(self.tensor(&format!("{prefix}.w")))?
            .add_bias(self.tensor(&format!("{prefix}.b")))
    }

    /// Mean of the encoder states over `start..end`, as a `[1, d]` row.
    pub fn pool_utterance(
        &self,
        enc: &EncoderOutput,
        start: usize,
        end: usize,
    ) -> ModelResult<Tensor> {
        if start >= end {
            return Err(ModelError::EmptySpan);
        }
        let pooled = enc.states.slice_rows(start, end)?.mean_rows()?;
        Ok(pooled.reshape(&[1, self.config().d_model])?)
    }

    /// The `[cls]` state: position 0 of an encoder run whose input
    /// began with `[cls]`.
    pub fn cls_state(&self, enc: &EncoderOutput) -> ModelResult<Tensor> {
        if enc.ids.first() != Some(&CLS_ID) {
            return Err(ModelError::MissingCls);
        }
        Ok(enc.states.slice_rows(0, 1)?)
    }

    /// Two-way logits for a candidate/context representation pair.
    pub fn classify(&self, h_y: &Tensor, h_c: &Tensor, head: ClsHead) -> TensorResult<Tensor> {
        let name = match head {
            ClsHead::Nud => "aux.nud.w",
            ClsHead::Si => "aux.si.w",
        };
        let joined = Tensor::concat_cols(&[h_y, h_c])?;
        joined.matmul(self.tensor(name))
    }
}

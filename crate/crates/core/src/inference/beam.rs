//! Beam-search and greedy decoding.
//!
//! Finished hypotheses are scored by `log P / lp(len)` with the GNMT
//! length penalty `lp(len) = ((5 + len) / 6)^penalty`, where `len`
//! counts generated tokens including the closing `[eos]`. Finished
//! hypotheses leave the beam for a pool; the search stops once the
//! best live hypothesis could not beat the pool even with the most
//! favorable penalty it can still reach.

use autodiff::Real;

use super::{InfResult, InferenceError};
use crate::corpus::BOS_ID;
use crate::model::{BoundModel, EncoderOutput, GenHead, RunMode};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: Real,
    pub eos_id: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 4,
            max_len: 128,
            length_penalty: 0.6,
            eos_id: crate::corpus::EOS_ID,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> InfResult<()> {
        if self.beam_size == 0 {
            return Err(InferenceError::BadConfig("beam_size must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(InferenceError::BadConfig("max_len must be >= 1".into()));
        }
        if !self.length_penalty.is_finite() {
            return Err(InferenceError::BadConfig(
                "length_penalty must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One decoding path. `ids` never contains `[bos]`; a finished path
/// ends with `[eos]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub ids: Vec<usize>,
    pub log_prob: Real,
    pub finished: bool,
}

/// Search outcome. `tokens` excludes the closing `[eos]`; `truncated`
/// marks a path cut off at `max_len` because nothing finished in time.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamResult {
    pub tokens: Vec<usize>,
    pub log_prob: Real,
    pub score: Real,
    pub truncated: bool,
}

pub fn gnmt_length_penalty(len: usize, penalty: Real) -> Real {
    ((5.0 + len as Real) / 6.0).powf(penalty)
}

/// Better-scoring first; among equal scores shorter sequences first,
/// then lexicographically smaller token ids. Total and deterministic.
fn rank(a: &(Real, Vec<usize>), b: &(Real, Vec<usize>)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(&b.1))
}

/// Log probabilities over the vocabulary for the next position after
/// `prefix` (generated ids so far, without `[bos]`).
fn next_log_probs(model: &BoundModel, enc: &EncoderOutput, prefix: &[usize]) -> InfResult<Vec<Real>> {
    let mut dec_input = Vec::with_capacity(prefix.len() + 1);
    dec_input.push(BOS_ID);
    dec_input.extend_from_slice(prefix);
    let states = model.decode(&dec_input, enc, &mut RunMode::Eval)?;
    let logits = model.project(&states, GenHead::Main)?;
    let v = model.config().vocab_size;
    let values = logits.value();
    let row = &values[(dec_input.len() - 1) * v..dec_input.len() * v];
    let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<Real>().ln();
    Ok(row.iter().map(|x| x - lse).collect())
}

fn best_index(pool: &[(Real, Vec<usize>)]) -> Option<usize> {
    (0..pool.len()).min_by(|&a, &b| rank(&pool[a], &pool[b]))
}

pub fn beam_search(
    model: &BoundModel,
    enc: &EncoderOutput,
    cfg: &BeamConfig,
) -> InfResult<BeamResult> {
    cfg.validate()?;
    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    // (score, ids) pools; scores are final for finished hypotheses.
    let mut finished: Vec<(Real, Vec<usize>)> = Vec::new();
    let mut finished_log_probs: Vec<Real> = Vec::new();
    let mut overflow: Vec<(Real, Vec<usize>)> = Vec::new();
    let mut overflow_log_probs: Vec<Real> = Vec::new();

    while !live.is_empty() {
        let mut candidates: Vec<(Real, Vec<usize>)> = Vec::new();
        for hyp in &live {
            let log_probs = next_log_probs(model, enc, &hyp.ids)?;
            for (token, lp) in log_probs.iter().enumerate() {
                let mut ids = hyp.ids.clone();
                ids.push(token);
                candidates.push((hyp.log_prob + lp, ids));
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(cfg.beam_size);

        live = Vec::new();
        for (log_prob, ids) in candidates {
            let len = ids.len();
            if *ids.last().expect("non-empty candidate") == cfg.eos_id {
                let score = log_prob / gnmt_length_penalty(len, cfg.length_penalty);
                finished.push((score, ids));
                finished_log_probs.push(log_prob);
            } else if len >= cfg.max_len {
                let score = log_prob / gnmt_length_penalty(len, cfg.length_penalty);
                overflow.push((score, ids));
                overflow_log_probs.push(log_prob);
            } else {
                live.push(Hypothesis {
                    ids,
                    log_prob,
                    finished: false,
                });
            }
        }

        if let Some(best) = best_index(&finished) {
            let best_score = finished[best].0;
            let reach = gnmt_length_penalty(cfg.max_len, cfg.length_penalty);
            let best_live_bound = live
                .iter()
                .map(|h| h.log_prob / reach)
                .fold(Real::NEG_INFINITY, Real::max);
            if best_live_bound <= best_score {
                break;
            }
        }
    }

    if let Some(i) = best_index(&finished) {
        let (score, mut ids) = finished.swap_remove(i);
        let log_prob = finished_log_probs.swap_remove(i);
        ids.pop();
        return Ok(BeamResult {
            tokens: ids,
            log_prob,
            score,
            truncated: false,
        });
    }
    let i = best_index(&overflow).expect("beam always produces a candidate");
    let (score, ids) = overflow.swap_remove(i);
    let log_prob = overflow_log_probs.swap_remove(i);
    Ok(BeamResult {
        tokens: ids,
        log_prob,
        score,
        truncated: true,
    })
}

/// Argmax decoding; ties pick the smallest token id. Equivalent to a
/// beam of one.
pub fn greedy_decode(
    model: &BoundModel,
    enc: &EncoderOutput,
    cfg: &BeamConfig,
) -> InfResult<BeamResult> {
    cfg.validate()?;
    let mut ids: Vec<usize> = Vec::new();
    let mut log_prob = 0.0;
    loop {
        let log_probs = next_log_probs(model, enc, &ids)?;
        let mut best = 0;
        for (token, lp) in log_probs.iter().enumerate() {
            if *lp > log_probs[best] {
                best = token;
            }
        }
        ids.push(best);
        log_prob += log_probs[best];
        let len = ids.len();
        if best == cfg.eos_id {
            let score = log_prob / gnmt_length_penalty(len, cfg.length_penalty);
            ids.pop();
            return Ok(BeamResult {
                tokens: ids,
                log_prob,
                score,
                truncated: false,
            });
        }
        if len >= cfg.max_len {
            let score = log_prob / gnmt_length_penalty(len, cfg.length_penalty);
            return Ok(BeamResult {
                tokens: ids,
                log_prob,
                score,
                truncated: true,
            });
        }
    }
}

//! Training objectives: the translation loss, the four auxiliary
//! losses, and their weighted combination.
//!
//! Three of the five losses are sequence generation losses (main
//! translation, monolingual context generation, cross-lingual context
//! generation) sharing one code path that differs only in which head
//! projects the decoder states. The other two are binary
//! discrimination losses (next-utterance, speaker identity) built from
//! two encoder passes and a bias-free linear classifier.
//!
//! The joint objective is
//!
//! ```text
//! J = L_nct + alpha * (L_mrg + L_crg + L_nud) + beta * L_si
//! ```
//!
//! with `alpha` and `beta` decayed from 1 to 0 by a [`Schedule`].

mod schedule;

pub use schedule::{Schedule, ScheduleMode};

use autodiff::{Real, Tensor, TensorError};
use thiserror::Error;

use crate::corpus::{NctExample, PairSample, PAD_ID};
use crate::model::{BoundModel, ClsHead, GenHead, ModelError, RunMode};

/// Class id outside the {0, 1} label space, so the cross entropy over
/// classifier logits never masks a position.
const CLS_PAD_SENTINEL: usize = 2;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("loss requires a non-empty batch")]
    EmptyBatch,

    #[error("bad loss weight: {0}")]
    BadWeight(String),

    #[error("bad schedule: {0}")]
    BadSchedule(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ObjResult<T> = Result<T, ObjectiveError>;

// ── Generation losses ───────────────────────────────────────────────

/// A batch generation loss with the non-pad token count it averages
/// over.
pub struct GenerationLoss {
    pub loss: Tensor,
    pub tokens: usize,
}

/// Label-smoothed cross entropy over a batch of generation examples,
/// averaged per target token across the whole batch (an example with
/// more tokens weighs proportionally more).
pub fn generation_loss(
    model: &BoundModel,
    batch: &[NctExample],
    head: GenHead,
    smoothing: Real,
    mode: &mut RunMode,
) -> ObjResult<GenerationLoss> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut total_tokens = 0usize;
    let mut weighted: Option<Tensor> = None;
    for example in batch {
        let enc = model.encode(&example.enc, mode)?;
        let states = model.decode(&example.dec_input, &enc, mode)?;
        let logits = model.project(&states, head)?;
        let ce = logits.cross_entropy_label_smoothed(&example.dec_target, smoothing, PAD_ID)?;
        if ce.all_pad {
            continue;
        }
        total_tokens += ce.tokens;
        let term = ce.loss.scale(ce.tokens as Real);
        weighted = Some(match weighted {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    let weighted = weighted.ok_or(ObjectiveError::EmptyBatch)?;
    Ok(GenerationLoss {
        loss: weighted.scale(1.0 / total_tokens as Real),
        tokens: total_tokens,
    })
}

/// Main translation loss.
pub fn loss_nct(
    model: &BoundModel,
    batch: &[NctExample],
    smoothing: Real,
    mode: &mut RunMode,
) -> ObjResult<GenerationLoss> {
    generation_loss(model, batch, GenHead::Main, smoothing, mode)
}

/// Monolingual context generation loss (target-side context in the
/// encoder, [`GenHead::Mrg`] on the decoder).
pub fn loss_mrg(
    model: &BoundModel,
    batch: &[NctExample],
    smoothing: Real,
    mode: &mut RunMode,
) -> ObjResult<GenerationLoss> {
    generation_loss(model, batch, GenHead::Mrg, smoothing, mode)
}

/// Cross-lingual context generation loss (source-side context in the
/// encoder, [`GenHead::Crg`] on the decoder).
pub fn loss_crg(
    model: &BoundModel,
    batch: &[NctExample],
    smoothing: Real,
    mode: &mut RunMode,
) -> ObjResult<GenerationLoss> {
    generation_loss(model, batch, GenHead::Crg, smoothing, mode)
}

// ── Discrimination losses ───────────────────────────────────────────

/// A batch discrimination loss with pair and correctness counts.
/// `correct_halves` counts argmax hits out of `2 * pairs` labeled
/// halves, for accuracy reporting.
pub struct PairLoss {
    pub loss: Tensor,
    pub pairs: usize,
    pub correct_halves: usize,
}

/// Negative log likelihood of one labeled half: encode the context
/// alone (its `[cls]` state is the context summary), encode the
/// candidate alone (mean-pooled), classify the joined pair.
fn half_loss(
    model: &BoundModel,
    half: &crate::corpus::LabeledPair,
    head: ClsHead,
    mode: &mut RunMode,
) -> ObjResult<(Tensor, bool)> {
    let ctx = model.encode(&half.context.to_encoder_input(), mode)?;
    let h_c = model.cls_state(&ctx)?;
    let cand_input = half.candidate.to_encoder_input();
    let cand = model.encode(&cand_input, mode)?;
    let h_y = model.pool_utterance(&cand, 0, cand_input.len())?;
    let logits = model.classify(&h_y, &h_c, head)?;
    let values = logits.value();
    let correct = if half.label == 1 {
        values[1] > values[0]
    } else {
        values[0] > values[1]
    };
    let ce = logits.cross_entropy_label_smoothed(&[half.label], 0.0, CLS_PAD_SENTINEL)?;
    Ok((ce.loss, correct))
}

/// Mean over pairs of `-log p(1 | positive) - log p(0 | negative)`.
pub fn classification_loss(
    model: &BoundModel,
    pairs: &[PairSample],
    head: ClsHead,
    mode: &mut RunMode,
) -> ObjResult<PairLoss> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut acc: Option<Tensor> = None;
    let mut correct_halves = 0usize;
    for pair in pairs {
        let (pos_loss, pos_ok) = half_loss(model, &pair.positive, head, mode)?;
        let (neg_loss, neg_ok) = half_loss(model, &pair.negative, head, mode)?;
        correct_halves += usize::from(pos_ok) + usize::from(neg_ok);
        let pair_loss = pos_loss.add(&neg_loss)?;
        acc = Some(match acc {
            None => pair_loss,
            Some(a) => a.add(&pair_loss)?,
        });
    }
    let loss = acc.expect("non-empty batch").scale(1.0 / pairs.len() as Real);
    Ok(PairLoss {
        loss,
        pairs: pairs.len(),
        correct_halves,
    })
}

/// Next-utterance discrimination loss.
pub fn loss_nud(
    model: &BoundModel,
    pairs: &[PairSample],
    mode: &mut RunMode,
) -> ObjResult<PairLoss> {
    classification_loss(model, pairs, ClsHead::Nud, mode)
}

/// Speaker identity discrimination loss.
pub fn loss_si(
    model: &BoundModel,
    pairs: &[PairSample],
    mode: &mut RunMode,
) -> ObjResult<PairLoss> {
    classification_loss(model, pairs, ClsHead::Si, mode)
}

// ── Joint objective ─────────────────────────────────────────────────

/// Weighted combination of the five losses. Terms whose weight is
/// exactly zero are left out of the graph entirely, so with
/// `alpha == beta == 0` the result IS the translation loss tensor.
pub fn joint(
    l_nct: &Tensor,
    l_mrg: &Tensor,
    l_crg: &Tensor,
    l_nud: &Tensor,
    l_si: &Tensor,
    alpha: Real,
    beta: Real,
) -> ObjResult<Tensor> {
    joint_scheduled(
        JointParts {
            l_nct,
            l_mrg: Some(l_mrg),
            l_crg: Some(l_crg),
            l_nud: Some(l_nud),
            l_si: Some(l_si),
        },
        alpha,
        beta,
    )
}

/// Loss handles entering the joint objective. The two response losses
/// are computable from any batch, so they are required whenever their
/// weight is positive; the discrimination losses depend on the data
/// (a batch may yield no usable pair) and simply drop out when absent.
#[derive(Debug, Clone, Copy)]
pub struct JointParts<'a> {
    pub l_nct: &'a Tensor,
    pub l_mrg: Option<&'a Tensor>,
    pub l_crg: Option<&'a Tensor>,
    pub l_nud: Option<&'a Tensor>,
    pub l_si: Option<&'a Tensor>,
}

/// Weighted joint loss over whichever terms are present. Zero-weight
/// terms never enter the graph; with both weights zero the translation
/// loss handle itself is returned.
pub fn joint_scheduled(parts: JointParts<'_>, alpha: Real, beta: Real) -> ObjResult<Tensor> {
    if !alpha.is_finite() || alpha < 0.0 || !beta.is_finite() || beta < 0.0 {
        return Err(ObjectiveError::BadWeight(format!(
            "weights must be finite and non-negative, got alpha={alpha} beta={beta}"
        )));
    }
    let mut j = parts.l_nct.clone();
    if alpha > 0.0 {
        let (l_mrg, l_crg) = match (parts.l_mrg, parts.l_crg) {
            (Some(m), Some(c)) => (m, c),
            _ => {
                return Err(ObjectiveError::BadWeight(
                    "generation weight is positive but a response loss is missing".into(),
                ))
            }
        };
        let mut aux = l_mrg.add(l_crg)?;
        if let Some(l_nud) = parts.l_nud {
            aux = aux.add(l_nud)?;
        }
        j = j.add(&aux.scale(alpha))?;
    }
    if beta > 0.0 {
        if let Some(l_si) = parts.l_si {
            j = j.add(&l_si.scale(beta))?;
        }
    }
    Ok(j)
}

//! Two-stage training: sentence-level pretraining of the translation
//! parameters, then fine-tuning of the full parameter set under the
//! annealed joint objective.
//!
//! Both stages share the same skeleton. Examples are packed into
//! token-budget batches, reshuffled every epoch; each step binds the
//! parameters onto a fresh tape, computes its losses, backpropagates,
//! and applies one Adam update. A non-finite loss or gradient aborts
//! training and hands back the parameters from before the bad step,
//! which are still sound.
//!
//! Everything random is derived from the seed through fixed,
//! independent stream ids, so trajectories are reproducible and adding
//! draws to one concern never perturbs another.

mod adam;
mod batch;

pub use adam::{AdamStepInfo, Optimizer};
pub use batch::token_batches;

use std::collections::BTreeMap;

use autodiff::{Real, Tape, Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    make_context_view, make_crg_example, make_mrg_example, make_nct_example, make_nud_samples,
    make_sentence_example, make_si_samples, ContextView, CorpusError, Dialogue, NctExample,
    PairSample, SampleStats, SentencePair, TargetPool, Vocabulary,
};
use crate::evalkit::{corpus_bleu, EvalError, Smoothing};
use crate::inference::{translate_dialogue, BeamConfig, InferenceError};
use crate::model::{BoundModel, ModelError, ModelParams, RunMode};
use crate::objectives::{
    joint_scheduled, loss_crg, loss_mrg, loss_nct, loss_nud, loss_si, GenerationLoss, JointParts,
    ObjectiveError, PairLoss, Schedule, ScheduleMode,
};

// ── Seed streams ────────────────────────────────────────────────────

/// Parameter initialization draws.
pub const STREAM_INIT: u64 = 0;
/// Epoch shuffling and batch packing.
pub const STREAM_BATCH: u64 = 1;
/// Negative-candidate draws for discrimination pairs.
pub const STREAM_NUD: u64 = 2;
/// Dropout masks.
pub const STREAM_DROPOUT: u64 = 3;

/// A generator for one concern, independent of every other stream
/// derived from the same seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("{0}")]
    Empty(String),
    #[error("example {index} costs {cost} tokens, over the batch budget {budget}")]
    Oversized {
        index: usize,
        cost: usize,
        budget: usize,
    },
    #[error("optimizer does not track {0}")]
    UnknownParam(String),
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Tells numeric blowups apart from genuine usage errors, digging
/// through the error nesting. A blowup mid-training aborts the stage
/// with the last sound parameters; anything else is a hard failure.
fn non_finite_message(err: &TrainError) -> Option<String> {
    let tensor = match err {
        TrainError::NonFinite(msg) => return Some(msg.clone()),
        TrainError::Tensor(e) => e,
        TrainError::Model(ModelError::Tensor(e)) => e,
        TrainError::Objective(ObjectiveError::Tensor(e)) => e,
        TrainError::Objective(ObjectiveError::Model(ModelError::Tensor(e))) => e,
        TrainError::Inference(InferenceError::Tensor(e)) => e,
        TrainError::Inference(InferenceError::Model(ModelError::Tensor(e))) => e,
        _ => return None,
    };
    matches!(tensor, TensorError::NonFinite { .. }).then(|| tensor.to_string())
}

/// Unwrap a step computation. A numeric blowup records the abort
/// reason and breaks out of the stage's labeled loop; other errors
/// propagate to the caller.
macro_rules! step_or_abort {
    ($result:expr, $completed:expr, $aborted:expr, $label:lifetime) => {
        match $result {
            Ok(value) => value,
            Err(err) => {
                let err = TrainError::from(err);
                match non_finite_message(&err) {
                    Some(msg) => {
                        $aborted = Some(format!("{msg} at step {}", $completed));
                        break $label;
                    }
                    None => return Err(err),
                }
            }
        }
    };
}

/// Settings for both stages. `t1` and `t2` are the stage step counts;
/// `t2` also fixes the length of the fine-tuning weight schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub t1: usize,
    pub t2: usize,
    pub batch_tokens: usize,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub lr_scale: Real,
    pub warmup_steps: usize,
    pub label_smoothing: Real,
    pub dropout: Real,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<Real>,
    /// Context window: how many previous turns each example sees.
    pub window: usize,
    pub schedule_mode: ScheduleMode,
    /// Score the dev set every this many steps; 0 never evaluates.
    pub eval_every: usize,
    /// Pin both auxiliary weights to zero regardless of the schedule.
    pub force_zero_aux: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t1: 2000,
            t2: 500,
            batch_tokens: 1024,
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-9,
            lr_scale: 1.0,
            warmup_steps: 4000,
            label_smoothing: 0.1,
            dropout: 0.1,
            seed: 0,
            grad_clip: Some(5.0),
            window: 3,
            schedule_mode: ScheduleMode::Linear,
            eval_every: 0,
            force_zero_aux: false,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned for the short second stage: the only difference
    /// is a much shorter warmup.
    pub fn finetune_defaults() -> Self {
        TrainConfig {
            warmup_steps: 500,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> TrainResult<()> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if self.t1 == 0 || self.t2 == 0 {
            return bad(format!("stage lengths must be positive, got {}/{}", self.t1, self.t2));
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return bad(format!("eps must be positive and finite, got {}", self.eps));
        }
        if !self.lr_scale.is_finite() || self.lr_scale <= 0.0 {
            return bad(format!("lr_scale must be positive and finite, got {}", self.lr_scale));
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if let Some(c) = self.grad_clip {
            if !c.is_finite() || c <= 0.0 {
                return bad(format!("grad_clip must be positive and finite, got {c}"));
            }
        }
        Ok(())
    }
}

/// One training-log record. Loss terms that were not computed at a
/// step serialize as nulls, as do the schedule weights during stage 1,
/// which has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// Stage-local step index, counting from 0. Stage 2 appends one
    /// extra non-update record at index `t2` showing the fully
    /// annealed weights.
    pub step: usize,
    pub stage: u8,
    pub l_nct: Real,
    pub l_mrg: Option<Real>,
    pub l_crg: Option<Real>,
    pub l_nud: Option<Real>,
    pub l_si: Option<Real>,
    pub alpha: Option<Real>,
    pub beta: Option<Real>,
    pub lr: Real,
    pub tokens: usize,
}

/// Observer callbacks. Both default to doing nothing.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub log: Option<&'a mut dyn FnMut(&StepLog)>,
    pub warn: Option<&'a mut dyn FnMut(&str)>,
}

impl TrainHooks<'_> {
    fn emit_log(&mut self, record: &StepLog) {
        if let Some(f) = self.log.as_mut() {
            f(record);
        }
    }

    fn emit_warn(&mut self, message: &str, sink: &mut Vec<String>) {
        sink.push(message.to_string());
        if let Some(f) = self.warn.as_mut() {
            f(message);
        }
    }
}

/// What a training stage produced. On an abort the parameters are the
/// ones in force before the failed update, which are still finite.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub completed_steps: usize,
    pub aborted: Option<String>,
    pub warnings: Vec<String>,
    /// Best dev score seen, when a dev set was scored at least once.
    pub best_dev_bleu: Option<Real>,
}

fn collect_grads<'a>(
    model: &BoundModel,
    names: impl Iterator<Item = &'a str>,
) -> BTreeMap<String, Vec<Real>> {
    let mut grads = BTreeMap::new();
    for name in names {
        if let Some(g) = model.tensor(name).grad() {
            grads.insert(name.to_string(), g);
        }
    }
    grads
}

/// Greedy-decodes every dialogue and scores the result against the
/// reference target sides.
fn dev_bleu(
    params: &ModelParams,
    dev: &[Dialogue],
    window: usize,
    vocab: &Vocabulary,
) -> TrainResult<Real> {
    let cfg = BeamConfig {
        beam_size: 1,
        max_len: params.config.max_pos.saturating_sub(1).max(1),
        ..BeamConfig::default()
    };
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for d in dev {
        let sources: Vec<Vec<String>> = d.turns().iter().map(|t| t.source.clone()).collect();
        let outputs = translate_dialogue(params, &sources, window, vocab, &cfg)?;
        for (out, turn) in outputs.iter().zip(d.turns()) {
            hyps.push(out.tokens.clone());
            refs.push(turn.target.clone());
        }
    }
    Ok(corpus_bleu(&hyps, &refs, Smoothing::Exp)?.score)
}

// ── Stage 1 ─────────────────────────────────────────────────────────

/// Sentence-level pretraining: `t1` Adam steps of translation loss
/// over the pairs, each encoded as a single-turn dialogue. Only the
/// translation parameters are updated; the auxiliary heads keep their
/// initialization.
pub fn pretrain(
    params: ModelParams,
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks,
) -> TrainResult<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::Empty("no sentence pairs to pretrain on".into()));
    }
    let examples = pairs
        .iter()
        .map(|p| make_sentence_example(p, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let costs: Vec<usize> = examples.iter().map(NctExample::token_cost).collect();

    let mut params = params;
    let theta: Vec<String> = params
        .iter()
        .filter(|p| !ModelParams::is_aux(&p.name))
        .map(|p| p.name.clone())
        .collect();
    let mut optimizer = Optimizer::new(cfg, &params, theta.iter().map(String::as_str))?;

    let mut batch_rng = seeded_stream(cfg.seed, STREAM_BATCH);
    let mut dropout_rng = seeded_stream(cfg.seed, STREAM_DROPOUT);

    let warnings = Vec::new();
    let mut completed = 0usize;
    let mut aborted = None;

    'training: while completed < cfg.t1 {
        let batches = token_batches(&costs, cfg.batch_tokens, &mut batch_rng)?;
        for batch in batches {
            if completed == cfg.t1 {
                break 'training;
            }
            let tape = Tape::new();
            let model = BoundModel::bind(&params, &tape)?;
            let nct_batch: Vec<NctExample> =
                batch.iter().map(|&i| examples[i].clone()).collect();
            let l = step_or_abort!(
                {
                    let mut mode = RunMode::Train {
                        dropout: cfg.dropout,
                        rng: &mut dropout_rng,
                    };
                    loss_nct(&model, &nct_batch, cfg.label_smoothing, &mut mode)
                },
                completed,
                aborted,
                'training
            );
            let l_value = l.loss.value()[0];
            if !l_value.is_finite() {
                aborted = Some(format!("loss became non-finite at step {completed}"));
                break 'training;
            }
            step_or_abort!(l.loss.backward(), completed, aborted, 'training);
            let grads = collect_grads(&model, optimizer.names());
            let info = step_or_abort!(
                optimizer.apply(&mut params, &grads),
                completed,
                aborted,
                'training
            );
            hooks.emit_log(&StepLog {
                step: completed,
                stage: 1,
                l_nct: l_value,
                l_mrg: None,
                l_crg: None,
                l_nud: None,
                l_si: None,
                alpha: None,
                beta: None,
                lr: info.lr,
                tokens: l.tokens,
            });
            completed += 1;
        }
    }

    Ok(TrainOutcome {
        params,
        completed_steps: completed,
        aborted,
        warnings,
        best_dev_bleu: None,
    })
}

// ── Stage 2 ─────────────────────────────────────────────────────────

struct Unit {
    dialogue_index: usize,
    u: usize,
    view: ContextView,
    nct: NctExample,
    mrg: NctExample,
    crg: NctExample,
    si: Option<PairSample>,
}

struct StepLosses {
    nct: GenerationLoss,
    mrg: Option<GenerationLoss>,
    crg: Option<GenerationLoss>,
    nud: Option<PairLoss>,
    si: Option<PairLoss>,
    joint: Tensor,
}

/// Multi-task fine-tuning: `t2` Adam steps over all parameters. Each
/// step rebuilds the objective for its batch: translation plus, while
/// their scheduled weights are positive, the two response-generation
/// losses and whatever discrimination pairs the batch can supply.
/// Negative candidates are redrawn every step. With a dev set and
/// `eval_every > 0`, the parameters scoring the best greedy-decoding
/// BLEU are the ones returned.
pub fn finetune(
    params: ModelParams,
    dialogues: &[Dialogue],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    dev: Option<&[Dialogue]>,
    hooks: &mut TrainHooks,
) -> TrainResult<TrainOutcome> {
    cfg.validate()?;
    if dialogues.is_empty() {
        return Err(TrainError::Empty("no dialogues to fine-tune on".into()));
    }

    let mut stats = SampleStats::default();
    let mut units = Vec::new();
    for (dialogue_index, d) in dialogues.iter().enumerate() {
        for u in 1..=d.len() {
            let mut unk = 0;
            let view = make_context_view(d, u, cfg.window, vocab, &mut unk)?;
            let nct = make_nct_example(&view, d, u, vocab)?;
            let mrg = make_mrg_example(&view, d, u, vocab)?;
            let crg = make_crg_example(&view, d, u, vocab)?;
            let si = make_si_samples(&view, d, u, vocab, &mut stats);
            units.push(Unit {
                dialogue_index,
                u,
                view,
                nct,
                mrg,
                crg,
                si,
            });
        }
    }
    let pool = TargetPool::build(dialogues, vocab);
    let costs: Vec<usize> = units.iter().map(|unit| unit.nct.token_cost()).collect();
    let si_available = units.iter().any(|unit| unit.si.is_some());

    let mut params = params;
    let schedule = Schedule::new(cfg.t2, cfg.schedule_mode)?;
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut optimizer = Optimizer::new(cfg, &params, names.iter().map(String::as_str))?;

    let mut batch_rng = seeded_stream(cfg.seed, STREAM_BATCH);
    let mut nud_rng = seeded_stream(cfg.seed, STREAM_NUD);
    let mut dropout_rng = seeded_stream(cfg.seed, STREAM_DROPOUT);

    let mut warnings = Vec::new();
    let mut completed = 0usize;
    let mut aborted = None;
    let mut best: Option<(Real, ModelParams)> = None;
    let mut last_batch: Option<Vec<usize>> = None;

    // Pair availability is fixed by the corpus, so a corpus that
    // cannot supply a single speaker pair never will, in any epoch.
    if !si_available {
        hooks.emit_warn(
            "the corpus yields no usable speaker pair; the speaker term contributes nothing",
            &mut warnings,
        );
    }

    'training: while completed < cfg.t2 {
        let batches = token_batches(&costs, cfg.batch_tokens, &mut batch_rng)?;
        for batch in batches {
            if completed == cfg.t2 {
                break 'training;
            }
            let (mut alpha, mut beta) = schedule.weights(completed);
            if cfg.force_zero_aux {
                alpha = 0.0;
                beta = 0.0;
            }

            let tape = Tape::new();
            let model = BoundModel::bind(&params, &tape)?;
            let forward = (|| -> TrainResult<StepLosses> {
                let mut mode = RunMode::Train {
                    dropout: cfg.dropout,
                    rng: &mut dropout_rng,
                };

                let nct_batch: Vec<NctExample> =
                    batch.iter().map(|&i| units[i].nct.clone()).collect();
                let nct = loss_nct(&model, &nct_batch, cfg.label_smoothing, &mut mode)?;

                let (mrg, crg, nud) = if alpha > 0.0 {
                    let mrg_batch: Vec<NctExample> =
                        batch.iter().map(|&i| units[i].mrg.clone()).collect();
                    let crg_batch: Vec<NctExample> =
                        batch.iter().map(|&i| units[i].crg.clone()).collect();
                    let mut nud_pairs = Vec::new();
                    for &i in &batch {
                        let unit = &units[i];
                        if let Some(pair) = make_nud_samples(
                            &unit.view,
                            &dialogues[unit.dialogue_index],
                            unit.dialogue_index,
                            unit.u,
                            &pool,
                            vocab,
                            &mut nud_rng,
                            &mut stats,
                        ) {
                            nud_pairs.push(pair);
                        }
                    }
                    let nud = if nud_pairs.is_empty() {
                        None
                    } else {
                        Some(loss_nud(&model, &nud_pairs, &mut mode)?)
                    };
                    (
                        Some(loss_mrg(&model, &mrg_batch, cfg.label_smoothing, &mut mode)?),
                        Some(loss_crg(&model, &crg_batch, cfg.label_smoothing, &mut mode)?),
                        nud,
                    )
                } else {
                    (None, None, None)
                };
                let si = if beta > 0.0 {
                    let si_pairs: Vec<PairSample> = batch
                        .iter()
                        .filter_map(|&i| units[i].si.clone())
                        .collect();
                    if si_pairs.is_empty() {
                        None
                    } else {
                        Some(loss_si(&model, &si_pairs, &mut mode)?)
                    }
                } else {
                    None
                };

                let joint = joint_scheduled(
                    JointParts {
                        l_nct: &nct.loss,
                        l_mrg: mrg.as_ref().map(|g| &g.loss),
                        l_crg: crg.as_ref().map(|g| &g.loss),
                        l_nud: nud.as_ref().map(|p| &p.loss),
                        l_si: si.as_ref().map(|p| &p.loss),
                    },
                    alpha,
                    beta,
                )?;
                Ok(StepLosses {
                    nct,
                    mrg,
                    crg,
                    nud,
                    si,
                    joint,
                })
            })();
            let losses = step_or_abort!(forward, completed, aborted, 'training);
            if !losses.joint.value()[0].is_finite() {
                aborted = Some(format!("joint loss became non-finite at step {completed}"));
                break 'training;
            }
            step_or_abort!(losses.joint.backward(), completed, aborted, 'training);
            let grads = collect_grads(&model, optimizer.names());
            let info = step_or_abort!(
                optimizer.apply(&mut params, &grads),
                completed,
                aborted,
                'training
            );
            hooks.emit_log(&StepLog {
                step: completed,
                stage: 2,
                l_nct: losses.nct.loss.value()[0],
                l_mrg: losses.mrg.as_ref().map(|g| g.loss.value()[0]),
                l_crg: losses.crg.as_ref().map(|g| g.loss.value()[0]),
                l_nud: losses.nud.as_ref().map(|p| p.loss.value()[0]),
                l_si: losses.si.as_ref().map(|p| p.loss.value()[0]),
                alpha: Some(alpha),
                beta: Some(beta),
                lr: info.lr,
                tokens: losses.nct.tokens,
            });
            last_batch = Some(batch);
            completed += 1;

            if let Some(dev_set) = dev {
                if cfg.eval_every > 0 && completed.is_multiple_of(cfg.eval_every) {
                    let score = step_or_abort!(
                        dev_bleu(&params, dev_set, cfg.window, vocab),
                        completed,
                        aborted,
                        'training
                    );
                    if best.as_ref().is_none_or(|(b, _)| score > *b) {
                        best = Some((score, params.clone()));
                    }
                }
            }
        }
    }

    // Close the log with the fully annealed weights: one non-update
    // record showing the translation loss of the final parameters on
    // the last batch, dropout off.
    if aborted.is_none() {
        if let Some(batch) = &last_batch {
            let tape = Tape::new();
            let model = BoundModel::bind_frozen(&params, &tape)?;
            let mut mode = RunMode::Eval;
            let nct_batch: Vec<NctExample> =
                batch.iter().map(|&i| units[i].nct.clone()).collect();
            let l = loss_nct(&model, &nct_batch, cfg.label_smoothing, &mut mode)?;
            let (alpha, beta) = schedule.weights(cfg.t2);
            hooks.emit_log(&StepLog {
                step: cfg.t2,
                stage: 2,
                l_nct: l.loss.value()[0],
                l_mrg: None,
                l_crg: None,
                l_nud: None,
                l_si: None,
                alpha: Some(alpha),
                beta: Some(beta),
                lr: optimizer.lr_at(optimizer.step() + 1),
                tokens: l.tokens,
            });
        }
    }

    let mut best_dev_bleu = None;
    if cfg.eval_every > 0 {
        if let Some(dev_set) = dev {
            if aborted.is_none() {
                let final_score = dev_bleu(&params, dev_set, cfg.window, vocab)?;
                let keep_final = best.as_ref().is_none_or(|(b, _)| final_score >= *b);
                if keep_final {
                    best_dev_bleu = Some(final_score);
                } else {
                    let (score, snapshot) = best.unwrap();
                    best_dev_bleu = Some(score);
                    params = snapshot;
                }
            } else if let Some((score, snapshot)) = best {
                // The current parameters may not even evaluate, but the
                // best snapshot already did.
                best_dev_bleu = Some(score);
                params = snapshot;
            }
        }
    }

    Ok(TrainOutcome {
        params,
        completed_steps: completed,
        aborted,
        warnings,
        best_dev_bleu,
    })
}

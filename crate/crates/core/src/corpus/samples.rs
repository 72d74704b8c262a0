//! Training example construction: translation examples, context-alone
//! generation examples, and the labeled context-utterance pairs for the
//! two classification tasks.

use rand::Rng;
use std::collections::HashMap;

use super::context::{ContextSeq, ContextView};
use super::vocab::{Vocabulary, BOS_ID, EOS_ID};
use super::{CorpusError, Dialogue, SentencePair, Speaker, Utterance};

/// Encoder-side input: token ids with aligned speaker ids, raw turn
/// numbers, and segment flags (`true` marks the current utterance,
/// `false` marks context positions).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub speakers: Vec<usize>,
    pub turns: Vec<usize>,
    pub flags: Vec<bool>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn from_context(seq: &ContextSeq, flag: bool) -> Self {
        EncoderInput {
            ids: seq.tokens.clone(),
            speakers: seq.speakers.clone(),
            turns: seq.turns.clone(),
            flags: vec![flag; seq.len()],
        }
    }

    fn push_utterance(&mut self, ids: Vec<usize>, speaker: Speaker, turn: usize, flag: bool) {
        for id in ids {
            self.ids.push(id);
            self.speakers.push(speaker.index());
            self.turns.push(turn);
            self.flags.push(flag);
        }
    }
}

/// One sequence-to-sequence training example.
#[derive(Debug, Clone, PartialEq)]
pub struct NctExample {
    pub enc: EncoderInput,
    /// `[bos]` followed by the reference tokens.
    pub dec_input: Vec<usize>,
    /// Reference tokens followed by `[eos]`.
    pub dec_target: Vec<usize>,
    pub unk_count: usize,
}

impl NctExample {
    /// Target tokens that contribute to the loss.
    pub fn target_len(&self) -> usize {
        self.dec_target.len()
    }

    /// Cost used by token-budget batching: encoder plus decoder length.
    pub fn token_cost(&self) -> usize {
        self.enc.len() + self.dec_input.len()
    }
}

fn decoder_io(target_ids: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let mut dec_input = Vec::with_capacity(target_ids.len() + 1);
    dec_input.push(BOS_ID);
    dec_input.extend(&target_ids);
    let mut dec_target = target_ids;
    dec_target.push(EOS_ID);
    (dec_input, dec_target)
}

/// Translation example for turn `u`: encoder sees the source context
/// followed directly by the current source utterance (flags mark the
/// utterance), decoder produces the current target utterance.
pub fn make_nct_example(
    view: &ContextView,
    d: &Dialogue,
    u: usize,
    vocab: &Vocabulary,
) -> Result<NctExample, CorpusError> {
    let utt = d.turn(u).ok_or_else(|| {
        CorpusError::Validation(format!("turn {u} out of range for dialogue {}", d.id))
    })?;
    let mut unk_count = 0;
    let mut enc = EncoderInput::from_context(&view.cx, false);
    enc.push_utterance(
        vocab.encode(&utt.source, &mut unk_count),
        utt.speaker,
        u,
        true,
    );
    let (dec_input, dec_target) = decoder_io(vocab.encode(&utt.target, &mut unk_count));
    Ok(NctExample {
        enc,
        dec_input,
        dec_target,
        unk_count,
    })
}

/// Generation example whose encoder input is the target-side context
/// alone; the decoder reproduces the current target utterance. All
/// segment flags are true so every position is visible to the decoder.
pub fn make_mrg_example(
    view: &ContextView,
    d: &Dialogue,
    u: usize,
    vocab: &Vocabulary,
) -> Result<NctExample, CorpusError> {
    context_generation_example(&view.cy, d, u, vocab)
}

/// As [`make_mrg_example`], but conditioned on the source-side context.
pub fn make_crg_example(
    view: &ContextView,
    d: &Dialogue,
    u: usize,
    vocab: &Vocabulary,
) -> Result<NctExample, CorpusError> {
    context_generation_example(&view.cx, d, u, vocab)
}

fn context_generation_example(
    context: &ContextSeq,
    d: &Dialogue,
    u: usize,
    vocab: &Vocabulary,
) -> Result<NctExample, CorpusError> {
    let utt = d.turn(u).ok_or_else(|| {
        CorpusError::Validation(format!("turn {u} out of range for dialogue {}", d.id))
    })?;
    let mut unk_count = 0;
    let enc = EncoderInput::from_context(context, true);
    let (dec_input, dec_target) = decoder_io(vocab.encode(&utt.target, &mut unk_count));
    Ok(NctExample {
        enc,
        dec_input,
        dec_target,
        unk_count,
    })
}

// ── Classification pairs ────────────────────────────────────────────────

/// Sentence-level example for stage-1 training: the pair is treated as
/// a one-turn dialogue, so the encoder sees `[cls]` followed by the
/// source tokens and the layout matches context-aware examples whose
/// window happens to be empty.
pub fn make_sentence_example(
    pair: &SentencePair,
    vocab: &Vocabulary,
) -> Result<NctExample, CorpusError> {
    let utt = Utterance::new(1, Speaker::Sx, pair.source.clone(), pair.target.clone())?;
    let dialogue = Dialogue::new(String::new(), vec![utt])?;
    let mut unk = 0;
    let view = super::context::make_context_view(&dialogue, 1, 0, vocab, &mut unk)?;
    let mut example = make_nct_example(&view, &dialogue, 1, vocab)?;
    example.unk_count += unk;
    Ok(example)
}

/// A bare annotated token sequence (no segment flags; classification
/// inputs are encoded with every position visible).
#[derive(Debug, Clone, PartialEq)]
pub struct SideSeq {
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
    pub turns: Vec<usize>,
}

impl SideSeq {
    fn from_context(seq: &ContextSeq) -> Self {
        SideSeq {
            tokens: seq.tokens.clone(),
            speakers: seq.speakers.clone(),
            turns: seq.turns.clone(),
        }
    }

    fn from_utterance(tokens: Vec<usize>, speaker: Speaker, turn: usize) -> Self {
        let n = tokens.len();
        SideSeq {
            tokens,
            speakers: vec![speaker.index(); n],
            turns: vec![turn; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Encoder input with every position visible, as classification
    /// passes run without segment gating.
    pub fn to_encoder_input(&self) -> EncoderInput {
        EncoderInput {
            ids: self.tokens.clone(),
            speakers: self.speakers.clone(),
            turns: self.turns.clone(),
            flags: vec![true; self.len()],
        }
    }
}

/// One labeled context-utterance pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub context: SideSeq,
    pub candidate: SideSeq,
    pub label: usize,
}

/// The positive and negative halves of one discrimination sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub positive: LabeledPair,
    pub negative: LabeledPair,
}

/// Counters for skipped or degraded samples, reported after corpus
/// preparation.
#[derive(Debug, Default, Clone)]
pub struct SampleStats {
    pub nud_pairs: usize,
    pub nud_skipped_no_negative: usize,
    pub nud_skipped_collisions: usize,
    pub si_pairs: usize,
    pub si_skipped_empty_context: usize,
    pub unk_tokens: usize,
}

/// Every target-side utterance in a corpus, indexed for uniform negative
/// draws keyed by (dialogue index, turn).
#[derive(Debug, Clone)]
pub struct TargetPool {
    entries: Vec<PoolEntry>,
    position: HashMap<(usize, usize), usize>,
}

#[derive(Debug, Clone)]
struct PoolEntry {
    tokens: Vec<usize>,
    speaker: Speaker,
    turn: usize,
}

impl TargetPool {
    pub fn build(dialogues: &[Dialogue], vocab: &Vocabulary) -> Self {
        let mut entries = Vec::new();
        let mut position = HashMap::new();
        let mut scratch = 0;
        for (di, d) in dialogues.iter().enumerate() {
            for utt in d.turns() {
                position.insert((di, utt.turn), entries.len());
                entries.push(PoolEntry {
                    tokens: vocab.encode(&utt.target, &mut scratch),
                    speaker: utt.speaker,
                    turn: utt.turn,
                });
            }
        }
        TargetPool { entries, position }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform draw over entries other than `exclude`, or `None` when no
    /// such entry exists.
    fn draw_other<R: Rng>(&self, exclude: (usize, usize), rng: &mut R) -> Option<&PoolEntry> {
        let skip = self.position.get(&exclude).copied();
        let candidates = self.entries.len() - usize::from(skip.is_some());
        if candidates == 0 {
            return None;
        }
        let mut idx = rng.gen_range(0..candidates);
        if let Some(skip) = skip {
            if idx >= skip {
                idx += 1;
            }
        }
        Some(&self.entries[idx])
    }
}

const COLLISION_RETRIES: usize = 10;

/// Build the positive/negative discrimination pair for turn `u`: the
/// target-side context paired with the true next utterance, and with a
/// random other target utterance from the corpus. Returns `None` (with a
/// counter bumped) when no usable negative exists.
#[allow(clippy::too_many_arguments)]
pub fn make_nud_samples<R: Rng>(
    view: &ContextView,
    d: &Dialogue,
    dialogue_index: usize,
    u: usize,
    pool: &TargetPool,
    vocab: &Vocabulary,
    rng: &mut R,
    stats: &mut SampleStats,
) -> Option<PairSample> {
    let utt = d.turn(u)?;
    let mut unk = 0;
    let positive_tokens = vocab.encode(&utt.target, &mut unk);

    let mut negative = None;
    for attempt in 0..COLLISION_RETRIES {
        match pool.draw_other((dialogue_index, u), rng) {
            None => {
                stats.nud_skipped_no_negative += 1;
                return None;
            }
            Some(entry) => {
                if entry.tokens != positive_tokens {
                    negative = Some(entry);
                    break;
                }
                if attempt + 1 == COLLISION_RETRIES {
                    stats.nud_skipped_collisions += 1;
                    return None;
                }
            }
        }
    }
    let entry = negative?;

    stats.nud_pairs += 1;
    stats.unk_tokens += unk;
    let context = SideSeq::from_context(&view.cy);
    Some(PairSample {
        positive: LabeledPair {
            context: context.clone(),
            candidate: SideSeq::from_utterance(positive_tokens, utt.speaker, u),
            label: 1,
        },
        negative: LabeledPair {
            context,
            candidate: SideSeq::from_utterance(
                entry.tokens.clone(),
                entry.speaker,
                entry.turn,
            ),
            label: 0,
        },
    })
}

/// Build the speaker-discrimination pair for turn `u`: the utterance
/// paired with its own speaker's target-side context (label 1) and with
/// the other speaker's (label 0). Skipped when either speaker-specific
/// context holds no utterances.
pub fn make_si_samples(
    view: &ContextView,
    d: &Dialogue,
    u: usize,
    vocab: &Vocabulary,
    stats: &mut SampleStats,
) -> Option<PairSample> {
    let utt = d.turn(u)?;
    let (own, other) = match utt.speaker {
        Speaker::Sx => (&view.cy_sx, &view.cy_sy),
        Speaker::Sy => (&view.cy_sy, &view.cy_sx),
    };
    if own.utterance_count() == 0 || other.utterance_count() == 0 {
        stats.si_skipped_empty_context += 1;
        return None;
    }

    let mut unk = 0;
    let candidate =
        SideSeq::from_utterance(vocab.encode(&utt.target, &mut unk), utt.speaker, u);
    stats.si_pairs += 1;
    stats.unk_tokens += unk;
    Some(PairSample {
        positive: LabeledPair {
            context: SideSeq::from_context(own),
            candidate: candidate.clone(),
            label: 1,
        },
        negative: LabeledPair {
            context: SideSeq::from_context(other),
            candidate,
            label: 0,
        },
    })
}

//! History views for a dialogue turn: the token sequences a model sees as
//! conversational context.
//!
//! For turn `u` with window size `k`, the context covers turns
//! `max(1, u-k) ..= u-1`. Four sequences are derived from that window:
//! the source sides (`cx`), the target sides (`cy`), and the target sides
//! split by speaker (`cy_sx`, `cy_sy`). Every sequence starts with
//! `[cls]` and separates consecutive utterances with `[sep]`; an empty
//! window leaves just `[cls]`.

use super::vocab::{Vocabulary, CLS_ID, SEP_ID};
use super::{CorpusError, Dialogue, Speaker};

/// One flattened context sequence with per-position annotations.
///
/// `[cls]` carries speaker SX and turn 0; `[sep]` inherits the speaker
/// and turn of the utterance before it; utterance tokens carry their own
/// speaker and raw (unclipped) turn number.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSeq {
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
    pub turns: Vec<usize>,
    /// Dialogue turns whose utterances appear here, in order.
    pub included_turns: Vec<usize>,
}

impl ContextSeq {
    fn new() -> Self {
        ContextSeq {
            tokens: vec![CLS_ID],
            speakers: vec![Speaker::Sx.index()],
            turns: vec![0],
            included_turns: Vec::new(),
        }
    }

    fn push_utterance(
        &mut self,
        turn: usize,
        speaker: Speaker,
        tokens: &[String],
        vocab: &Vocabulary,
        unk_count: &mut usize,
    ) {
        if let Some(&prev_turn) = self.included_turns.last() {
            let prev_speaker = Speaker::for_turn(prev_turn);
            self.tokens.push(SEP_ID);
            self.speakers.push(prev_speaker.index());
            self.turns.push(prev_turn);
        }
        for id in vocab.encode(tokens, unk_count) {
            self.tokens.push(id);
            self.speakers.push(speaker.index());
            self.turns.push(turn);
        }
        self.included_turns.push(turn);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn utterance_count(&self) -> usize {
        self.included_turns.len()
    }
}

/// The four context sequences for one turn.
#[derive(Debug, Clone)]
pub struct ContextView {
    pub u: usize,
    pub window: usize,
    pub cx: ContextSeq,
    pub cy: ContextSeq,
    pub cy_sx: ContextSeq,
    pub cy_sy: ContextSeq,
}

/// Build the context view for turn `u` of `dialogue` with window `k`.
pub fn make_context_view(
    dialogue: &Dialogue,
    u: usize,
    k: usize,
    vocab: &Vocabulary,
    unk_count: &mut usize,
) -> Result<ContextView, CorpusError> {
    if u == 0 || u > dialogue.len() {
        return Err(CorpusError::Validation(format!(
            "turn {u} out of range for dialogue {} with {} turns",
            dialogue.id,
            dialogue.len()
        )));
    }
    let first = if u > k { u - k } else { 1 };

    let mut cx = ContextSeq::new();
    let mut cy = ContextSeq::new();
    let mut cy_sx = ContextSeq::new();
    let mut cy_sy = ContextSeq::new();

    for t in first..u {
        let utt = dialogue.turn(t).expect("window turns exist");
        cx.push_utterance(t, utt.speaker, &utt.source, vocab, unk_count);
        cy.push_utterance(t, utt.speaker, &utt.target, vocab, unk_count);
        let split = match utt.speaker {
            Speaker::Sx => &mut cy_sx,
            Speaker::Sy => &mut cy_sy,
        };
        split.push_utterance(t, utt.speaker, &utt.target, vocab, unk_count);
    }

    Ok(ContextView {
        u,
        window: k,
        cx,
        cy,
        cy_sx,
        cy_sy,
    })
}

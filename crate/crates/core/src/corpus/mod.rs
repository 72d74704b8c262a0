//! Dialogue and sentence corpora: the on-disk schema, validation, and the
//! derived training views (history contexts and auxiliary-task samples).
//!
//! A chat corpus is line-delimited JSON, one conversation per line. Turns
//! are numbered from 1, speakers strictly alternate with speaker SX taking
//! the odd turns, and both text fields hold space-separated tokens.

mod context;
mod samples;
mod vocab;

pub use context::{make_context_view, ContextSeq, ContextView};
pub use samples::{
    make_crg_example, make_mrg_example, make_nct_example, make_nud_samples,
    make_sentence_example, make_si_samples,
    EncoderInput, LabeledPair, NctExample, PairSample, SampleStats, SideSeq, TargetPool,
};
pub use vocab::{Vocabulary, BOS_ID, CLS_ID, EOS_ID, PAD_ID, RESERVED, SEP_ID, UNK_ID};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("corpus contains no tokens")]
    Empty,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ── Speakers and utterances ─────────────────────────────────────────────

/// The two interlocutors. SX opens the conversation and holds every odd
/// turn; SY holds the even turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Sx,
    Sy,
}

impl Speaker {
    pub fn for_turn(turn: usize) -> Speaker {
        if turn % 2 == 1 {
            Speaker::Sx
        } else {
            Speaker::Sy
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::Sx => Speaker::Sy,
            Speaker::Sy => Speaker::Sx,
        }
    }

    /// Row index into the speaker embedding table.
    pub fn index(self) -> usize {
        match self {
            Speaker::Sx => 0,
            Speaker::Sy => 1,
        }
    }
}

/// One turn of a conversation: the original utterance and its reference
/// translation, both tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub turn: usize,
    pub speaker: Speaker,
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Utterance {
    pub fn new(
        turn: usize,
        speaker: Speaker,
        source: Vec<String>,
        target: Vec<String>,
    ) -> Result<Self, CorpusError> {
        if turn == 0 {
            return Err(CorpusError::Validation("turn numbers start at 1".into()));
        }
        if speaker != Speaker::for_turn(turn) {
            return Err(CorpusError::Validation(format!(
                "turn {turn} must belong to {:?}",
                Speaker::for_turn(turn)
            )));
        }
        if source.is_empty() || target.is_empty() {
            return Err(CorpusError::Validation(format!(
                "turn {turn} has an empty source or target side"
            )));
        }
        Ok(Utterance {
            turn,
            speaker,
            source,
            target,
        })
    }
}

/// A validated conversation: turns numbered 1..=n with alternating
/// speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    turns: Vec<Utterance>,
}

impl Dialogue {
    pub fn new(id: String, turns: Vec<Utterance>) -> Result<Self, CorpusError> {
        if turns.is_empty() {
            return Err(CorpusError::Validation(format!(
                "dialogue {id} has no turns"
            )));
        }
        for (i, u) in turns.iter().enumerate() {
            if u.turn != i + 1 {
                return Err(CorpusError::Validation(format!(
                    "dialogue {id}: expected turn {} at position {i}, found {}",
                    i + 1,
                    u.turn
                )));
            }
        }
        Ok(Dialogue { id, turns })
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// 1-based access matching the turn numbering.
    pub fn turn(&self, u: usize) -> Option<&Utterance> {
        if u == 0 {
            return None;
        }
        self.turns.get(u - 1)
    }
}

// ── On-disk dialogue schema ─────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    turn: usize,
    speaker: Speaker,
    source: String,
    target: String,
}

pub(crate) fn tokens_of(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

impl TryFrom<DialogueRecord> for Dialogue {
    type Error = CorpusError;

    fn try_from(rec: DialogueRecord) -> Result<Self, CorpusError> {
        let turns = rec
            .turns
            .into_iter()
            .map(|t| Utterance::new(t.turn, t.speaker, tokens_of(&t.source), tokens_of(&t.target)))
            .collect::<Result<Vec<_>, _>>()?;
        Dialogue::new(rec.dialogue_id, turns)
    }
}

impl From<&Dialogue> for DialogueRecord {
    fn from(d: &Dialogue) -> Self {
        DialogueRecord {
            dialogue_id: d.id.clone(),
            turns: d
                .turns
                .iter()
                .map(|u| TurnRecord {
                    turn: u.turn,
                    speaker: u.speaker,
                    source: u.source.join(" "),
                    target: u.target.join(" "),
                })
                .collect(),
        }
    }
}

/// How the parser treats malformed records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Stop at the first bad record.
    FailFast,
    /// Skip bad records and report them in the outcome.
    SkipAndReport,
}

/// A record the parser refused, with its 1-based line number.
#[derive(Debug, Clone)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub dialogues: Vec<Dialogue>,
    pub issues: Vec<RecordIssue>,
}

/// Parse a line-delimited dialogue corpus. Blank lines are ignored.
pub fn parse_dialogue_corpus<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<ParseOutcome, CorpusError> {
    let mut out = ParseOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<Dialogue, String> = serde_json::from_str::<DialogueRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| Dialogue::try_from(rec).map_err(|e| e.to_string()));
        match parsed {
            Ok(d) => out.dialogues.push(d),
            Err(message) => match mode {
                ParseMode::FailFast => {
                    return Err(CorpusError::Record {
                        line: line_no,
                        message,
                    })
                }
                ParseMode::SkipAndReport => out.issues.push(RecordIssue {
                    line: line_no,
                    message,
                }),
            },
        }
    }
    Ok(out)
}

/// Canonical single-line serialization of one dialogue. Parsing a line
/// this function produced and serializing it again is byte-identical.
pub fn serialize_dialogue(d: &Dialogue) -> String {
    serde_json::to_string(&DialogueRecord::from(d)).expect("dialogue records always serialize")
}

pub fn write_dialogue_corpus<W: Write>(w: &mut W, dialogues: &[Dialogue]) -> std::io::Result<()> {
    for d in dialogues {
        writeln!(w, "{}", serialize_dialogue(d))?;
    }
    Ok(())
}

// ── Sentence-level parallel corpus ──────────────────────────────────────

/// One pre-training sentence pair, tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// Parse a tab-separated `source<TAB>target` corpus.
pub fn parse_parallel_corpus<R: BufRead>(
    reader: R,
    mode: ParseMode,
) -> Result<(Vec<SentencePair>, Vec<RecordIssue>), CorpusError> {
    let mut pairs = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(2, '\t');
        let src = fields.next().unwrap_or("");
        let tgt = fields.next();
        let message = match tgt {
            None => Some("missing tab separator".to_string()),
            Some(tgt) => {
                let source = tokens_of(src);
                let target = tokens_of(tgt);
                if source.is_empty() || target.is_empty() {
                    Some("empty source or target side".to_string())
                } else {
                    pairs.push(SentencePair { source, target });
                    None
                }
            }
        };
        if let Some(message) = message {
            match mode {
                ParseMode::FailFast => {
                    return Err(CorpusError::Record {
                        line: line_no,
                        message,
                    })
                }
                ParseMode::SkipAndReport => issues.push(RecordIssue {
                    line: line_no,
                    message,
                }),
            }
        }
    }
    Ok((pairs, issues))
}

#[cfg(test)]
pub(crate) fn test_utterance(turn: usize, src: &str, tgt: &str) -> Utterance {
    Utterance::new(
        turn,
        Speaker::for_turn(turn),
        tokens_of(src),
        tokens_of(tgt),
    )
    .unwrap()
}

/// Five-turn fixture shared by the unit tests of several modules.
#[cfg(test)]
pub(crate) fn sample_dialogue() -> Dialogue {
    Dialogue::new(
        "d1".into(),
        vec![
            test_utterance(1, "hello there", "hallo du"),
            test_utterance(2, "how are you", "wie geht es"),
            test_utterance(3, "fine thanks", "gut danke"),
            test_utterance(4, "good to hear", "schoen zu hoeren"),
            test_utterance(5, "bye now", "tschuess jetzt"),
        ],
    )
    .unwrap()
}

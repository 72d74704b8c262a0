//! Dialogue coherence scored as the cosine between bag-of-words
//! sentence vectors built from an external word embedding table.
//!
//! A sentence vector is the mean of the vectors of its in-vocabulary
//! tokens. Out-of-vocabulary tokens are skipped; a sentence with no
//! known tokens, or whose mean collapses to the zero vector, has no
//! direction and yields no score. The report pairs each translated
//! utterance with the reference target side of the utterance `n` turns
//! earlier, so the translation is judged against the conversation it
//! should cohere with rather than against other model output.

use std::collections::HashMap;
use std::path::Path;

use autodiff::Real;

use crate::corpus::Dialogue;

use super::{EvalError, EvalResult};

/// Token-to-vector lookup of a single fixed dimension.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<Real>>,
}

impl WordVectorTable {
    /// Builds a table from pairs. All vectors must share one nonzero
    /// dimension and tokens must be unique.
    pub fn from_pairs<I>(pairs: I) -> EvalResult<Self>
    where
        I: IntoIterator<Item = (String, Vec<Real>)>,
    {
        let mut dim = 0usize;
        let mut vectors = HashMap::new();
        for (token, vector) in pairs {
            if dim == 0 {
                dim = vector.len();
                if dim == 0 {
                    return Err(EvalError::BadConfig(format!(
                        "token {token:?} has a zero-length vector"
                    )));
                }
            } else if vector.len() != dim {
                return Err(EvalError::BadConfig(format!(
                    "token {token:?} has {} components, expected {dim}",
                    vector.len()
                )));
            }
            if vectors.insert(token.clone(), vector).is_some() {
                return Err(EvalError::BadConfig(format!(
                    "token {token:?} appears twice"
                )));
            }
        }
        if vectors.is_empty() {
            return Err(EvalError::Empty("word vector table has no entries".into()));
        }
        Ok(WordVectorTable { dim, vectors })
    }

    /// Parses the common text layout: an optional `count dim` header
    /// line, then one `token v1 v2 ... vd` line per word. Blank lines
    /// are ignored. When `expected_dim` is given, the table must match
    /// it.
    pub fn parse(text: &str, expected_dim: Option<usize>) -> EvalResult<Self> {
        let mut dim = 0usize;
        let mut declared_count: Option<usize> = None;
        let mut vectors: HashMap<String, Vec<Real>> = HashMap::new();
        let mut first_content_line = true;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if first_content_line && fields.len() == 2 {
                if let (Ok(count), Ok(header_dim)) =
                    (fields[0].parse::<usize>(), fields[1].parse::<usize>())
                {
                    declared_count = Some(count);
                    dim = header_dim;
                    first_content_line = false;
                    continue;
                }
            }
            first_content_line = false;
            if fields.len() < 2 {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: "expected a token followed by vector components".into(),
                });
            }
            let token = fields[0].to_string();
            let mut vector = Vec::with_capacity(fields.len() - 1);
            for field in &fields[1..] {
                let v: Real = field.parse().map_err(|_| EvalError::Parse {
                    line: line_no,
                    message: format!("bad vector component {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(EvalError::Parse {
                        line: line_no,
                        message: format!("non-finite vector component {field:?}"),
                    });
                }
                vector.push(v);
            }
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: format!("{} components where {dim} were expected", vector.len()),
                });
            }
            if vectors.insert(token.clone(), vector).is_some() {
                return Err(EvalError::Parse {
                    line: line_no,
                    message: format!("token {token:?} appears twice"),
                });
            }
        }
        if vectors.is_empty() {
            return Err(EvalError::Empty("word vector table has no entries".into()));
        }
        if let Some(count) = declared_count {
            if count != vectors.len() {
                return Err(EvalError::Parse {
                    line: 1,
                    message: format!("header promises {count} entries, found {}", vectors.len()),
                });
            }
        }
        if let Some(expected) = expected_dim {
            if dim != expected {
                return Err(EvalError::BadConfig(format!(
                    "table dimension {dim} does not match the expected {expected}"
                )));
            }
        }
        Ok(WordVectorTable { dim, vectors })
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> EvalResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, expected_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[Real]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    fn mean_vector(&self, tokens: &[String]) -> Option<Vec<Real>> {
        let mut sum = vec![0.0; self.dim];
        let mut hits = 0usize;
        for token in tokens {
            if let Some(vector) = self.vectors.get(token) {
                for (s, v) in sum.iter_mut().zip(vector) {
                    *s += v;
                }
                hits += 1;
            }
        }
        if hits == 0 {
            return None;
        }
        for s in &mut sum {
            *s /= hits as Real;
        }
        Some(sum)
    }
}

/// Cosine similarity between the mean word vectors of two token
/// sequences. `None` when either side has no in-vocabulary token or a
/// zero-norm mean.
pub fn coherence_sim(a: &[String], b: &[String], table: &WordVectorTable) -> Option<Real> {
    let va = table.mean_vector(a)?;
    let vb = table.mean_vector(b)?;
    let dot: Real = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na: Real = va.iter().map(|x| x * x).sum::<Real>().sqrt();
    let nb: Real = vb.iter().map(|x| x * x).sum::<Real>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

/// Mean coherence at one history distance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceRow {
    /// How many turns back the compared utterance lies.
    pub n: usize,
    /// Mean cosine over the scored pairs, or `None` when every pair
    /// was skipped or none existed.
    pub mean: Option<Real>,
    /// Number of pairs that produced a score.
    pub pairs: usize,
    /// Number of pairs dropped for lack of a direction.
    pub skipped: usize,
}

/// Coherence rows for history distances 1 through `max_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub rows: Vec<CoherenceRow>,
}

/// Scores translated dialogues against reference history.
///
/// `translations[d][u]` holds the translated tokens for utterance
/// `u + 1` of dialogue `d` (the same order as `Dialogue::turns`). Each
/// translated utterance is compared with the reference target side of
/// the utterance `n` turns before it, for every `n` up to `max_n`.
pub fn coherence_report(
    translations: &[Vec<Vec<String>>],
    dialogues: &[Dialogue],
    table: &WordVectorTable,
    max_n: usize,
) -> EvalResult<CoherenceReport> {
    if max_n == 0 {
        return Err(EvalError::BadConfig(
            "coherence needs at least one history distance".into(),
        ));
    }
    if translations.len() != dialogues.len() {
        return Err(EvalError::Mismatch(format!(
            "{} translated dialogues vs {} reference dialogues",
            translations.len(),
            dialogues.len()
        )));
    }
    for (d, (trans, dialogue)) in translations.iter().zip(dialogues).enumerate() {
        if trans.len() != dialogue.len() {
            return Err(EvalError::Mismatch(format!(
                "dialogue {d}: {} translated utterances vs {} turns",
                trans.len(),
                dialogue.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let mut sum = 0.0;
        let mut pairs = 0usize;
        let mut skipped = 0usize;
        for (trans, dialogue) in translations.iter().zip(dialogues) {
            let turns = dialogue.turns();
            for u in n..turns.len() {
                match coherence_sim(&trans[u], &turns[u - n].target, table) {
                    Some(sim) => {
                        sum += sim;
                        pairs += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
        let mean = if pairs > 0 { Some(sum / pairs as Real) } else { None };
        rows.push(CoherenceRow {
            n,
            mean,
            pairs,
            skipped,
        });
    }
    Ok(CoherenceReport { rows })
}

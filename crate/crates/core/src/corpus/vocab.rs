//! Token vocabulary with a fixed reserved prefix.
//!
//! Ids 0..=5 are always `[pad] [unk] [bos] [eos] [cls] [sep]` in that
//! order; corpus tokens fill the remaining slots ordered by descending
//! count, ties broken lexicographically.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::CorpusError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const CLS_ID: usize = 4;
pub const SEP_ID: usize = 5;

pub const RESERVED: [&str; 6] = ["[pad]", "[unk]", "[bos]", "[eos]", "[cls]", "[sep]"];

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from token counts. `max_size` caps the total vocabulary
    /// including the six reserved ids; `min_count` drops rare tokens.
    /// Literal reserved strings occurring in the corpus are ignored so
    /// they can never claim a second id.
    pub fn build<'a, I>(tokens: I, max_size: usize, min_count: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size <= RESERVED.len() {
            return Err(CorpusError::Vocab(format!(
                "max_size must exceed {} to leave room for corpus tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in tokens {
            if RESERVED.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token, falling back to `[unk]`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encode a token sequence; bumps `unk_count` once per unknown.
    pub fn encode(&self, tokens: &[String], unk_count: &mut usize) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| {
                let id = self.id(t);
                if id == UNK_ID && t != RESERVED[UNK_ID] {
                    *unk_count += 1;
                }
                id
            })
            .collect()
    }

    /// Decode ids to tokens, skipping the reserved control ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id >= RESERVED.len())
            .filter_map(|&id| self.token(id).map(str::to_owned))
            .collect()
    }

    /// One token per line, in id order.
    pub fn save<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    /// Load a token-per-line file, validating the reserved prefix and
    /// rejecting duplicates.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            tokens.push(line);
        }
        if tokens.len() < RESERVED.len() {
            return Err(CorpusError::Vocab(format!(
                "vocabulary file has {} entries, fewer than the {} reserved tokens",
                tokens.len(),
                RESERVED.len()
            )));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if tokens[i] != *want {
                return Err(CorpusError::Vocab(format!(
                    "reserved token {i} must be {want}, found {}",
                    tokens[i]
                )));
            }
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = seen.insert(t.clone(), i) {
                return Err(CorpusError::Vocab(format!(
                    "duplicate token {t} at lines {} and {}",
                    prev + 1,
                    i + 1
                )));
            }
        }
        Ok(Self::from_tokens(tokens))
    }
}

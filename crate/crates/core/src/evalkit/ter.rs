//! Translation edit rate: word-level edit distance plus block shifts,
//! normalized by reference length.
//!
//! A shift moves one contiguous span of the hypothesis to a new
//! position at a cost of one edit. The search is greedy: at every
//! round the shift that lowers the remaining edit distance the most is
//! applied, ties going to the earliest span start, then the earliest
//! span end, then the earliest landing position, and the loop stops
//! when no shift buys a strict reduction. Landing positions further
//! than [`SHIFT_DISTANCE_CAP`] tokens from the span start are not
//! considered.

use autodiff::Real;

use super::{EvalError, EvalResult};

/// Longest distance, in tokens, a shifted span may travel.
pub const SHIFT_DISTANCE_CAP: usize = 10;

/// The parts of a TER computation: applied shifts, leftover edit
/// distance, their sum, and that sum over the reference length as a
/// percentage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerOutcome {
    pub shifts: usize,
    pub edit_distance: usize,
    pub total: usize,
    pub percent: Real,
}

/// Word-level Levenshtein distance with unit costs for insertion,
/// deletion, and substitution.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for (i, tok_a) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, tok_b) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(tok_a != tok_b);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

fn apply_shift(tokens: &[String], i: usize, j: usize, p: usize) -> Vec<String> {
    let mut rest: Vec<String> = Vec::with_capacity(tokens.len());
    rest.extend_from_slice(&tokens[..i]);
    rest.extend_from_slice(&tokens[j..]);
    let mut out = Vec::with_capacity(tokens.len());
    out.extend_from_slice(&rest[..p]);
    out.extend_from_slice(&tokens[i..j]);
    out.extend_from_slice(&rest[p..]);
    out
}

pub fn ter(hyp: &[String], reference: &[String]) -> EvalResult<TerOutcome> {
    if reference.is_empty() {
        return Err(EvalError::Empty("reference has no tokens".into()));
    }
    let mut current: Vec<String> = hyp.to_vec();
    let mut distance = levenshtein(&current, reference);
    let mut shifts = 0usize;
    loop {
        let mut best: Option<(usize, Vec<String>)> = None;
        let len = current.len();
        for i in 0..len {
            for j in i + 1..=len {
                let remaining = len - (j - i);
                for p in 0..=remaining {
                    if p == i || p.abs_diff(i) > SHIFT_DISTANCE_CAP {
                        continue;
                    }
                    let candidate = apply_shift(&current, i, j, p);
                    let d = levenshtein(&candidate, reference);
                    if d < distance && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                        best = Some((d, candidate));
                    }
                }
            }
        }
        match best {
            Some((d, seq)) => {
                current = seq;
                distance = d;
                shifts += 1;
            }
            None => break,
        }
    }
    let total = shifts + distance;
    Ok(TerOutcome {
        shifts,
        edit_distance: distance,
        total,
        percent: total as Real / reference.len() as Real * 100.0,
    })
}

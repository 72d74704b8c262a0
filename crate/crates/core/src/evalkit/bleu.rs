//! Corpus-level BLEU with clipped n-gram counts pooled over the whole
//! corpus, single reference, orders 1 through 4.
//!
//! Exponential smoothing follows the usual convention: a doubling
//! counter starts at 1 and each zero-match order doubles it and scores
//! `1 / (counter * total)`. Orders for which the corpus has no n-grams
//! at all (every hypothesis shorter than n) drop out of the geometric
//! mean instead of forcing the score to zero.

use std::collections::HashMap;

use autodiff::Real;

use super::{EvalError, EvalResult};

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    None,
    Exp,
}

/// Corpus BLEU with its parts. `precisions` are fractions in [0, 1];
/// orders absent from the corpus hold 0 and are excluded from the
/// score.
#[derive(Debug, Clone)]
pub struct BleuReport {
    pub score: Real,
    pub precisions: [Real; MAX_ORDER],
    pub brevity_penalty: Real,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

pub fn corpus_bleu(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    smoothing: Smoothing,
) -> EvalResult<BleuReport> {
    if hyps.is_empty() {
        return Err(EvalError::Empty("no hypotheses to score".into()));
    }
    if hyps.len() != refs.len() {
        return Err(EvalError::Mismatch(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in &hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(&clip);
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut effective_orders = 0usize;
    let mut zero_precision = false;
    let mut smooth_counter = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        effective_orders += 1;
        let p = if matches[n] > 0 {
            matches[n] as Real / totals[n] as Real
        } else {
            match smoothing {
                Smoothing::Exp => {
                    smooth_counter *= 2.0;
                    1.0 / (smooth_counter * totals[n] as Real)
                }
                Smoothing::None => {
                    zero_precision = true;
                    0.0
                }
            }
        };
        precisions[n] = p;
        if p > 0.0 {
            log_sum += p.ln();
        }
    }

    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as Real / hyp_len as Real).exp()
    };

    let score = if zero_precision || effective_orders == 0 || brevity_penalty == 0.0 {
        0.0
    } else {
        brevity_penalty * (log_sum / effective_orders as Real).exp() * 100.0
    };

    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpus_scores_one_hundred() {
        let sents = vec![
            toks("the cat sat on the mat"),
            toks("a b"),
            toks("one two three four five six seven"),
        ];
        for smoothing in [Smoothing::None, Smoothing::Exp] {
            let report = corpus_bleu(&sents, &sents, smoothing).unwrap();
            assert!((report.score - 100.0).abs() < 1e-9);
            assert_eq!(report.brevity_penalty, 1.0);
        }
    }

    #[test]
    fn hand_counted_single_pair_case() {
        // hyp "a b c d" vs ref "a b x d": unigrams 3/4, bigrams 1/3,
        // trigrams 0/2 smoothed to 1/4, 4-grams 0/1 smoothed to 1/4,
        // lengths equal so no brevity penalty. Geometric mean by hand:
        // (0.75 * 1/3 * 0.25 * 0.25)^(1/4) * 100.
        let report = corpus_bleu(&[toks("a b c d")], &[toks("a b x d")], Smoothing::Exp).unwrap();
        assert!((report.precisions[0] - 0.75).abs() < 1e-15);
        assert!((report.precisions[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((report.precisions[2] - 0.25).abs() < 1e-15);
        assert!((report.precisions[3] - 0.25).abs() < 1e-15);
        assert_eq!(report.brevity_penalty, 1.0);
        assert!((report.score - 35.35533905932737).abs() < 1e-9);
    }

    #[test]
    fn disjoint_long_pair_lands_below_one_but_above_zero() {
        let hyp: Vec<String> = (0..30).map(|i| format!("h{i}")).collect();
        let re: Vec<String> = (0..30).map(|i| format!("r{i}")).collect();
        let report = corpus_bleu(&[hyp], &[re], Smoothing::Exp).unwrap();
        assert!(report.score > 0.0);
        assert!(report.score < 1.0);
        assert!((report.score - 0.6207471707676466).abs() < 1e-9);
    }

    #[test]
    fn unsmoothed_zero_precision_zeroes_the_score() {
        let report = corpus_bleu(&[toks("a b c d")], &[toks("w x y z")], Smoothing::None).unwrap();
        assert_eq!(report.score, 0.0);
        assert_eq!(report.precisions[0], 0.0);
    }

    #[test]
    fn short_hypotheses_use_only_the_orders_they_have() {
        // Two-token hypothesis: orders 3 and 4 have no n-grams at all,
        // so the mean runs over orders 1 and 2 and the brevity penalty
        // does the punishing: exp(1 - 4/2) * 100.
        let report = corpus_bleu(&[toks("a b")], &[toks("a b c d")], Smoothing::Exp).unwrap();
        assert!((report.precisions[0] - 1.0).abs() < 1e-15);
        assert!((report.precisions[1] - 1.0).abs() < 1e-15);
        assert_eq!(report.precisions[2], 0.0);
        assert_eq!(report.precisions[3], 0.0);
        assert!((report.score - 36.787944117144235).abs() < 1e-9);
    }

    #[test]
    fn score_matches_its_own_decomposition() {
        let hyps = vec![toks("the cat sat on the mat"), toks("dogs bark loudly at night")];
        let refs = vec![toks("the cat sat on a mat"), toks("dogs bark loud at night")];
        let report = corpus_bleu(&hyps, &refs, Smoothing::Exp).unwrap();
        let mean_log: Real = report.precisions.iter().map(|p| p.ln()).sum::<Real>() / 4.0;
        let recomposed = report.brevity_penalty * mean_log.exp() * 100.0;
        assert!((report.score - recomposed).abs() < 1e-9);
    }

    #[test]
    fn jointly_permuting_pairs_leaves_the_score_unchanged() {
        let hyps = vec![toks("a b c"), toks("d e f g"), toks("h i")];
        let refs = vec![toks("a b x"), toks("d y f g"), toks("h z")];
        let base = corpus_bleu(&hyps, &refs, Smoothing::Exp).unwrap();
        let hyps_p = vec![hyps[2].clone(), hyps[0].clone(), hyps[1].clone()];
        let refs_p = vec![refs[2].clone(), refs[0].clone(), refs[1].clone()];
        let permuted = corpus_bleu(&hyps_p, &refs_p, Smoothing::Exp).unwrap();
        assert_eq!(base.score, permuted.score);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(
            corpus_bleu(&[], &[], Smoothing::Exp),
            Err(EvalError::Empty(_))
        ));
        assert!(matches!(
            corpus_bleu(&[toks("a")], &[], Smoothing::Exp),
            Err(EvalError::Mismatch(_))
        ));
    }
}

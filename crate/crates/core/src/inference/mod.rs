//! Decoding a trained model over a conversation.
//!
//! Translation consumes source-side history only: the encoder input
//! for turn `u` is the same `[cls] + windowed context + utterance`
//! layout used in training, built from the observed source utterances.
//! The auxiliary tasks play no role here.

mod beam;

pub use beam::{beam_search, gnmt_length_penalty, greedy_decode, BeamConfig, BeamResult, Hypothesis};

use autodiff::{Real, Tape, TensorError};
use thiserror::Error;

use crate::corpus::{EncoderInput, Speaker, Vocabulary, CLS_ID, SEP_ID};
use crate::model::{BoundModel, ModelError, ModelParams, RunMode};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("bad decoding config: {0}")]
    BadConfig(String),

    #[error("utterance {index} is empty")]
    EmptyUtterance { index: usize },

    #[error("input cannot fit max_pos {max_pos} even after truncation")]
    CannotFit { max_pos: usize },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type InfResult<T> = Result<T, InferenceError>;

/// One decoded utterance with its search diagnostics.
#[derive(Debug, Clone)]
pub struct TranslationOutput {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub log_prob: Real,
    pub score: Real,
    /// The encoder input lost tokens to the position limit.
    pub truncated_input: bool,
    /// The search hit `max_len` without finishing.
    pub truncated_output: bool,
    pub unk_tokens: usize,
}

/// Encoder input for translating turn `u` (1-based) of a dialogue
/// whose source sides are `sources`, with context window `k`.
///
/// The layout matches training exactly: `[cls]`, then the context
/// utterances of turns `max(1, u-k) .. u-1` joined by `[sep]` markers
/// that inherit the preceding utterance's annotations, then the
/// current utterance. Context positions carry a false segment flag.
///
/// Inputs longer than `max_pos` are cut down: oldest context tokens
/// go first, then the tail of the current utterance, which never
/// shrinks below one token.
pub fn build_translation_input(
    sources: &[Vec<String>],
    u: usize,
    k: usize,
    vocab: &Vocabulary,
    max_pos: usize,
) -> InfResult<(EncoderInput, bool, usize)> {
    if u == 0 || u > sources.len() {
        return Err(InferenceError::BadConfig(format!(
            "turn {u} out of range for {} source utterances",
            sources.len()
        )));
    }
    for (i, s) in sources.iter().enumerate().take(u) {
        if s.is_empty() {
            return Err(InferenceError::EmptyUtterance { index: i + 1 });
        }
    }

    let mut unk = 0;
    let mut input = EncoderInput {
        ids: vec![CLS_ID],
        speakers: vec![Speaker::Sx.index()],
        turns: vec![0],
        flags: vec![false],
    };
    let first = if u > k { u - k } else { 1 };
    for turn in first..u {
        if turn > first {
            let prev = turn - 1;
            input.ids.push(SEP_ID);
            input.speakers.push(Speaker::for_turn(prev).index());
            input.turns.push(prev);
            input.flags.push(false);
        }
        for id in vocab.encode(&sources[turn - 1], &mut unk) {
            input.ids.push(id);
            input.speakers.push(Speaker::for_turn(turn).index());
            input.turns.push(turn);
            input.flags.push(false);
        }
    }
    let context_len = input.ids.len();
    for id in vocab.encode(&sources[u - 1], &mut unk) {
        input.ids.push(id);
        input.speakers.push(Speaker::for_turn(u).index());
        input.turns.push(u);
        input.flags.push(false);
    }
    for f in input.flags.iter_mut().skip(context_len) {
        *f = true;
    }

    let mut truncated = false;
    // Context tokens sit at 1..context_len; drop the oldest first.
    let mut context_left = context_len - 1;
    while input.ids.len() > max_pos && context_left > 0 {
        input.ids.remove(1);
        input.speakers.remove(1);
        input.turns.remove(1);
        input.flags.remove(1);
        context_left -= 1;
        truncated = true;
    }
    while input.ids.len() > max_pos && input.ids.len() > 2 {
        input.ids.pop();
        input.speakers.pop();
        input.turns.pop();
        input.flags.pop();
        truncated = true;
    }
    if input.ids.len() > max_pos {
        return Err(InferenceError::CannotFit { max_pos });
    }
    Ok((input, truncated, unk))
}

/// Translate every utterance of one dialogue, in order. Pure in the
/// parameters: dialogues share no state, so any batching or reordering
/// across dialogues is safe.
pub fn translate_dialogue(
    params: &ModelParams,
    sources: &[Vec<String>],
    k: usize,
    vocab: &Vocabulary,
    cfg: &BeamConfig,
) -> InfResult<Vec<TranslationOutput>> {
    cfg.validate()?;
    let max_pos = params.config.max_pos;
    let mut outputs = Vec::with_capacity(sources.len());
    for u in 1..=sources.len() {
        let (input, truncated_input, unk_tokens) =
            build_translation_input(sources, u, k, vocab, max_pos)?;
        let tape = Tape::new();
        let model = BoundModel::bind_frozen(params, &tape)?;
        let enc = model.encode(&input, &mut RunMode::Eval)?;
        let result = beam_search(&model, &enc, cfg)?;
        outputs.push(TranslationOutput {
            tokens: vocab.decode(&result.tokens),
            token_ids: result.tokens,
            log_prob: result.log_prob,
            score: result.score,
            truncated_input,
            truncated_output: result.truncated,
            unk_tokens,
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        make_context_view, make_nct_example, make_sentence_example, sample_dialogue, SentencePair,
    };
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let text = "hello there how are you fine thanks good to hear bye now \
                    hallo du wie geht es gut danke schoen zu hoeren tschuess jetzt";
        Vocabulary::build(text.split_whitespace(), 40, 1).unwrap()
    }

    #[test]
    fn translation_input_matches_the_training_layout() {
        let d = sample_dialogue();
        let v = vocab();
        let sources: Vec<Vec<String>> = d.turns().iter().map(|t| t.source.clone()).collect();
        for u in 1..=d.len() {
            for k in 0..4 {
                let mut unk = 0;
                let view = make_context_view(&d, u, k, &v, &mut unk).unwrap();
                let trained = make_nct_example(&view, &d, u, &v).unwrap();
                let (built, truncated, _) =
                    build_translation_input(&sources, u, k, &v, 512).unwrap();
                assert!(!truncated);
                assert_eq!(built, trained.enc, "u={u} k={k}");
            }
        }
    }

    #[test]
    fn one_turn_translation_input_is_the_sentence_layout() {
        let pair = SentencePair {
            source: vec!["hello".into(), "there".into()],
            target: vec!["hallo".into(), "du".into()],
        };
        let v = vocab();
        let sentence = make_sentence_example(&pair, &v).unwrap();
        let (built, _, _) = build_translation_input(
            std::slice::from_ref(&pair.source),
            1,
            3,
            &v,
            512,
        )
        .unwrap();
        assert_eq!(built, sentence.enc);
    }

    #[test]
    fn truncation_drops_context_before_the_utterance_tail() {
        let d = sample_dialogue();
        let v = vocab();
        let sources: Vec<Vec<String>> = d.turns().iter().map(|t| t.source.clone()).collect();
        let (full, _, _) = build_translation_input(&sources, 5, 4, &v, 512).unwrap();
        let full_len = full.len();
        let utterance_len = full.flags.iter().filter(|f| **f).count();

        // Room for [cls] + one context token + the utterance.
        let budget = utterance_len + 2;
        let (cut, truncated, _) = build_translation_input(&sources, 5, 4, &v, budget).unwrap();
        assert!(truncated);
        assert!(budget < full_len);
        assert_eq!(cut.len(), budget);
        assert_eq!(cut.ids[0], CLS_ID);
        assert_eq!(cut.flags.iter().filter(|f| **f).count(), utterance_len);
        // The surviving context token is the newest one.
        assert_eq!(cut.ids[1], full.ids[full_len - utterance_len - 1]);

        // Tighter than the utterance itself: the tail goes, one token stays.
        let (tail, truncated, _) = build_translation_input(&sources, 5, 4, &v, 2).unwrap();
        assert!(truncated);
        assert_eq!(tail.len(), 2);
        assert_eq!(tail.ids[0], CLS_ID);
        assert!(tail.flags[1]);
        assert_eq!(tail.ids[1], full.ids[full_len - utterance_len]);
    }

    #[test]
    fn impossible_budget_is_rejected() {
        let v = vocab();
        let sources = vec![vec!["hello".to_string(), "there".to_string()]];
        assert!(matches!(
            build_translation_input(&sources, 1, 0, &v, 1),
            Err(InferenceError::CannotFit { .. })
        ));
    }

    #[test]
    fn dialogues_are_translated_independently_and_deterministically() {
        let d = sample_dialogue();
        let v = vocab();
        let sources: Vec<Vec<String>> = d.turns().iter().map(|t| t.source.clone()).collect();
        let config = ModelConfig {
            layers: 1,
            d_model: 8,
            d_ff: 16,
            heads: 2,
            vocab_size: v.len(),
            max_turns: 6,
            max_pos: 64,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::new(config, &mut rng).unwrap();
        let cfg = BeamConfig {
            beam_size: 2,
            max_len: 5,
            ..BeamConfig::default()
        };
        let a = translate_dialogue(&params, &sources, 2, &v, &cfg).unwrap();
        let b = translate_dialogue(&params, &sources, 2, &v, &cfg).unwrap();
        assert_eq!(a.len(), sources.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.token_ids, y.token_ids);
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.score, y.score);
        }
    }
}

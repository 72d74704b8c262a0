//! The encoder and decoder checked against a straight-line reference
//! implementation written in plain loops over `f64` slices (see
//! `common/mod.rs`): no tape, no shared helpers, its own sinusoid formula
//! and softmax.

mod common;

use common::*;
use nct_core::corpus::EncoderInput;
use nct_core::model::{BoundModel, GenHead, ModelParams, RunMode};

use autodiff::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gated_encoder_matches_the_reference() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::new(config(2), &mut rng).unwrap();
        let input = EncoderInput {
            ids: vec![4, 6, 7],
            speakers: vec![0, 0, 0],
            turns: vec![0, 1, 1],
            flags: vec![false, true, true],
        };
        let tape = Tape::new();
        let model = BoundModel::bind_frozen(&params, &tape).unwrap();
        let states = model.encode(&input, &mut RunMode::Eval).unwrap().states.value();
        let reference = r_encoder(&params, &input);
        assert!(
            max_abs_diff(&states, &reference) < TOL,
            "seed {seed}: {}",
            max_abs_diff(&states, &reference)
        );
    }
}

#[test]
fn gated_encoder_matches_the_reference_on_a_mixed_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let params = ModelParams::new(config(3), &mut rng).unwrap();
    let input = EncoderInput {
        ids: vec![4, 8, 9, 5, 10, 6, 7, 11],
        speakers: vec![0, 0, 0, 0, 1, 0, 0, 0],
        turns: vec![0, 1, 1, 1, 2, 3, 3, 3],
        flags: vec![false, false, false, false, false, true, true, true],
    };
    let tape = Tape::new();
    let model = BoundModel::bind_frozen(&params, &tape).unwrap();
    let states = model.encode(&input, &mut RunMode::Eval).unwrap().states.value();
    let reference = r_encoder(&params, &input);
    assert!(max_abs_diff(&states, &reference) < TOL);
}

#[test]
fn decoder_matches_the_reference() {
    for seed in [7u64, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::new(config(1), &mut rng).unwrap();
        let input = EncoderInput {
            ids: vec![4, 8, 6, 7],
            speakers: vec![0, 1, 0, 0],
            turns: vec![0, 2, 3, 3],
            flags: vec![false, false, true, true],
        };
        let tape = Tape::new();
        let model = BoundModel::bind_frozen(&params, &tape).unwrap();
        let enc = model.encode(&input, &mut RunMode::Eval).unwrap();
        let prefix = [2usize, 9, 10];
        let states = model.decode(&prefix, &enc, &mut RunMode::Eval).unwrap().value();
        let reference = r_decoder(&params, &prefix, &enc.states.value(), &input.flags);
        assert!(max_abs_diff(&states, &reference) < TOL, "seed {seed}");
    }
}

#[test]
fn single_segment_input_runs_as_a_plain_transformer() {
    // With the speaker and turn tables zeroed and every flag true, the
    // translation path must agree with an ordinary transformer that has
    // no notion of segments, speakers, or turns.
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut params = ModelParams::new(config(2), &mut rng).unwrap();
        params.get_mut("embed.speaker").unwrap().data.fill(0.0);
        params.get_mut("embed.turn").unwrap().data.fill(0.0);

        let ids = vec![6usize, 9, 11, 7];
        let input = EncoderInput {
            ids: ids.clone(),
            speakers: vec![0, 0, 0, 0],
            turns: vec![1, 1, 1, 1],
            flags: vec![true; 4],
        };
        let tape = Tape::new();
        let model = BoundModel::bind_frozen(&params, &tape).unwrap();
        let enc = model.encode(&input, &mut RunMode::Eval).unwrap();
        let prefix = [2usize, 12, 13];
        let states = model.decode(&prefix, &enc, &mut RunMode::Eval).unwrap();
        let logits = model.project(&states, GenHead::Main).unwrap().value();

        let plain_enc = r_plain_encoder(&params, &ids);
        assert!(max_abs_diff(&enc.states.value(), &plain_enc) < TOL);
        let plain_dec = r_plain_decoder(&params, &prefix, &plain_enc, ids.len());
        let d = params.config.d_model;
        let v = params.config.vocab_size;
        let mut plain_logits = r_matmul(&plain_dec, data(&params, "head.main.w"), 3, d, v);
        r_add_bias(&mut plain_logits, data(&params, "head.main.b"), 3, v);
        assert!(
            max_abs_diff(&logits, &plain_logits) < TOL,
            "seed {seed}: {}",
            max_abs_diff(&logits, &plain_logits)
        );
    }
}

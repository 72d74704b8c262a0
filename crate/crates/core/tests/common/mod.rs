//! Straight-line reference transformer shared by the integration tests.
//!
//! Everything here is written in plain loops over `f64` slices: no tape, no
//! shared helpers, its own sinusoid formula and softmax. The reference
//! computes masked attention by iterating only over allowed keys, so
//! agreement with the real model also validates that the additive mask
//! constant cannot leak into results.

#![allow(dead_code)]

use nct_core::corpus::EncoderInput;
use nct_core::model::{ModelConfig, ModelParams, LN_EPS};

pub const TOL: f64 = 1e-10;

pub fn config(layers: usize) -> ModelConfig {
    ModelConfig {
        layers,
        d_model: 8,
        d_ff: 16,
        heads: 2,
        vocab_size: 14,
        max_turns: 4,
        max_pos: 32,
        dropout: 0.0,
        share_aux_heads_with_main: false,
        attend_all_cross: false,
    }
}

pub fn data<'a>(p: &'a ModelParams, name: &str) -> &'a [f64] {
    &p.get(name).expect(name).data
}

pub fn r_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn r_add_bias(x: &mut [f64], b: &[f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            x[r * cols + c] += b[c];
        }
    }
}

pub fn r_layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let denom = (var + LN_EPS).sqrt();
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) / denom * gain[c] + bias[c];
        }
    }
    out
}

pub fn r_sinusoid(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i - i % 2) as f64;
    let freq = (-(pair / d as f64) * (10000f64).ln()).exp();
    let angle = pos as f64 * freq;
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn r_embed_encoder(p: &ModelParams, input: &EncoderInput) -> Vec<f64> {
    let d = p.config.d_model;
    let we = data(p, "embed.word");
    let se = data(p, "embed.speaker");
    let te = data(p, "embed.turn");
    let clip = p.config.max_turns - 1;
    let mut out = vec![0.0; input.len() * d];
    for pos in 0..input.len() {
        let (w, s, t) = (input.ids[pos], input.speakers[pos], input.turns[pos].min(clip));
        for j in 0..d {
            out[pos * d + j] =
                we[w * d + j] + r_sinusoid(pos, j, d) + se[s * d + j] + te[t * d + j];
        }
    }
    out
}

pub fn r_embed_decoder(p: &ModelParams, ids: &[usize]) -> Vec<f64> {
    let d = p.config.d_model;
    let we = data(p, "embed.word");
    let mut out = vec![0.0; ids.len() * d];
    for pos in 0..ids.len() {
        for j in 0..d {
            out[pos * d + j] = we[ids[pos] * d + j] + r_sinusoid(pos, j, d);
        }
    }
    out
}

pub fn r_attention(
    p: &ModelParams,
    prefix: &str,
    q_in: &[f64],
    kv_in: &[f64],
    q_rows: usize,
    kv_rows: usize,
    allow: &dyn Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let d = p.config.d_model;
    let heads = p.config.heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let part = |s: &str| data(p, &format!("{prefix}.{s}"));
    let mut q = r_matmul(q_in, part("wq"), q_rows, d, d);
    r_add_bias(&mut q, part("bq"), q_rows, d);
    let mut k = r_matmul(kv_in, part("wk"), kv_rows, d, d);
    r_add_bias(&mut k, part("bk"), kv_rows, d);
    let mut v = r_matmul(kv_in, part("wv"), kv_rows, d, d);
    r_add_bias(&mut v, part("bv"), kv_rows, d);

    let mut merged = vec![0.0; q_rows * d];
    for h in 0..heads {
        let off = h * dk;
        for i in 0..q_rows {
            let keys: Vec<usize> = (0..kv_rows).filter(|&j| allow(i, j)).collect();
            assert!(!keys.is_empty(), "reference attention row with no keys");
            let score = |j: usize| {
                let mut s = 0.0;
                for t in 0..dk {
                    s += q[i * d + off + t] * k[j * d + off + t];
                }
                s * scale
            };
            let max = keys.iter().map(|&j| score(j)).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = keys.iter().map(|&j| (score(j) - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            for t in 0..dk {
                let mut acc = 0.0;
                for (w, &j) in weights.iter().zip(&keys) {
                    acc += w / total * v[j * d + off + t];
                }
                merged[i * d + off + t] = acc;
            }
        }
    }
    let mut out = r_matmul(&merged, part("wo"), q_rows, d, d);
    r_add_bias(&mut out, part("bo"), q_rows, d);
    out
}

pub fn r_ffn(p: &ModelParams, prefix: &str, x: &[f64], rows: usize) -> Vec<f64> {
    let d = p.config.d_model;
    let d_ff = p.config.d_ff;
    let part = |s: &str| data(p, &format!("{prefix}.{s}"));
    let mut h = r_matmul(x, part("w1"), rows, d, d_ff);
    r_add_bias(&mut h, part("b1"), rows, d_ff);
    for v in h.iter_mut() {
        *v = v.max(0.0);
    }
    let mut out = r_matmul(&h, part("w2"), rows, d_ff, d);
    r_add_bias(&mut out, part("b2"), rows, d);
    out
}

pub fn r_sublayer(
    p: &ModelParams,
    norm_prefix: &str,
    x: &[f64],
    sub: &[f64],
    rows: usize,
) -> Vec<f64> {
    let d = p.config.d_model;
    let summed: Vec<f64> = x.iter().zip(sub).map(|(a, b)| a + b).collect();
    r_layer_norm(
        &summed,
        data(p, &format!("{norm_prefix}.gain")),
        data(p, &format!("{norm_prefix}.bias")),
        rows,
        d,
    )
}

/// Full gated encoder: layer 0 open, upper layers segment-partitioned.
pub fn r_encoder(p: &ModelParams, input: &EncoderInput) -> Vec<f64> {
    let n = input.len();
    let mut x = r_embed_encoder(p, input);
    for l in 0..p.config.layers {
        let flags = input.flags.clone();
        let allow = move |qi: usize, ki: usize| l == 0 || flags[qi] == flags[ki];
        let att = r_attention(p, &format!("enc.{l}.att"), &x, &x, n, n, &allow);
        x = r_sublayer(p, &format!("enc.{l}.att_norm"), &x, &att, n);
        let f = r_ffn(p, &format!("enc.{l}.ffn"), &x, n);
        x = r_sublayer(p, &format!("enc.{l}.ffn_norm"), &x, &f, n);
    }
    x
}

/// Decoder with causal self-attention and cross-attention over flagged
/// encoder positions.
pub fn r_decoder(p: &ModelParams, prefix: &[usize], enc: &[f64], flags: &[bool]) -> Vec<f64> {
    let t = prefix.len();
    let mut x = r_embed_decoder(p, prefix);
    for l in 0..p.config.layers {
        let sa = r_attention(
            p,
            &format!("dec.{l}.self"),
            &x,
            &x,
            t,
            t,
            &|qi, ki| ki <= qi,
        );
        x = r_sublayer(p, &format!("dec.{l}.self_norm"), &x, &sa, t);
        let flags = flags.to_vec();
        let ca = r_attention(
            p,
            &format!("dec.{l}.cross"),
            &x,
            enc,
            t,
            flags.len(),
            &move |_, ki| flags[ki],
        );
        x = r_sublayer(p, &format!("dec.{l}.cross_norm"), &x, &ca, t);
        let f = r_ffn(p, &format!("dec.{l}.ffn"), &x, t);
        x = r_sublayer(p, &format!("dec.{l}.ffn_norm"), &x, &f, t);
    }
    x
}

/// A plain sentence-level transformer: word + position embeddings, full
/// self-attention at every layer, causal decoder, cross-attention over
/// every encoder position. No segments, no speaker or turn tables.
pub fn r_plain_encoder(p: &ModelParams, ids: &[usize]) -> Vec<f64> {
    let n = ids.len();
    let mut x = r_embed_decoder(p, ids);
    for l in 0..p.config.layers {
        let att = r_attention(p, &format!("enc.{l}.att"), &x, &x, n, n, &|_, _| true);
        x = r_sublayer(p, &format!("enc.{l}.att_norm"), &x, &att, n);
        let f = r_ffn(p, &format!("enc.{l}.ffn"), &x, n);
        x = r_sublayer(p, &format!("enc.{l}.ffn_norm"), &x, &f, n);
    }
    x
}

pub fn r_plain_decoder(p: &ModelParams, prefix: &[usize], enc: &[f64], enc_len: usize) -> Vec<f64> {
    let t = prefix.len();
    let mut x = r_embed_decoder(p, prefix);
    for l in 0..p.config.layers {
        let sa = r_attention(
            p,
            &format!("dec.{l}.self"),
            &x,
            &x,
            t,
            t,
            &|qi, ki| ki <= qi,
        );
        x = r_sublayer(p, &format!("dec.{l}.self_norm"), &x, &sa, t);
        let ca = r_attention(
            p,
            &format!("dec.{l}.cross"),
            &x,
            enc,
            t,
            enc_len,
            &|_, _| true,
        );
        x = r_sublayer(p, &format!("dec.{l}.cross_norm"), &x, &ca, t);
        let f = r_ffn(p, &format!("dec.{l}.ffn"), &x, t);
        x = r_sublayer(p, &format!("dec.{l}.ffn_norm"), &x, &f, t);
    }
    x
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

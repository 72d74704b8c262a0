//! The parameter store: every trainable array with a stable name, plus
//! the fixed sinusoidal position table.
//!
//! Names are hierarchical (`enc.0.att.wq`, `head.main.w`, `aux.nud.w`).
//! The `aux.` prefix marks the auxiliary-task heads: the translation
//! parameter set θ is everything else, and the full set Θ is θ plus the
//! `aux.` parameters. Creation order is the canonical order used by the
//! optimizer and the checkpoint format.
//!
//! Matrices act on row vectors by right-multiplication, so a head
//! mapping d-dimensional states to vocabulary logits is stored as
//! `[d, vocab]`.

use std::collections::HashMap;

use autodiff::Real;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::ModelResult;

const INIT_STD: Real = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
    pe: Vec<Real>,
}

impl ModelParams {
    /// Freshly initialized parameters: truncated-normal weights (std
    /// 0.02, clipped at two standard deviations), zero biases, unit
    /// layer-norm gains.
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> ModelResult<Self> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            rng,
        };
        let d = config.d_model;
        let v = config.vocab_size;

        b.weight("embed.word", &[v, d]);
        b.weight("embed.speaker", &[2, d]);
        b.weight("embed.turn", &[config.max_turns, d]);

        for l in 0..config.layers {
            b.attention(&format!("enc.{l}.att"), d);
            b.norm(&format!("enc.{l}.att_norm"), d);
            b.ffn(&format!("enc.{l}.ffn"), d, config.d_ff);
            b.norm(&format!("enc.{l}.ffn_norm"), d);
        }
        for l in 0..config.layers {
            b.attention(&format!("dec.{l}.self"), d);
            b.norm(&format!("dec.{l}.self_norm"), d);
            b.attention(&format!("dec.{l}.cross"), d);
            b.norm(&format!("dec.{l}.cross_norm"), d);
            b.ffn(&format!("dec.{l}.ffn"), d, config.d_ff);
            b.norm(&format!("dec.{l}.ffn_norm"), d);
        }

        b.weight("head.main.w", &[d, v]);
        b.zeros("head.main.b", &[v]);
        b.weight("aux.mrg.w", &[d, v]);
        b.zeros("aux.mrg.b", &[v]);
        b.weight("aux.crg.w", &[d, v]);
        b.zeros("aux.crg.b", &[v]);
        b.weight("aux.nud.w", &[2 * d, 2]);
        b.weight("aux.si.w", &[2 * d, 2]);

        let params = b.params;
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let pe = sinusoidal_table(config.max_pos, d);
        Ok(ModelParams {
            config,
            params,
            index,
            pe,
        })
    }

    /// True for parameters outside the translation set θ.
    pub fn is_aux(name: &str) -> bool {
        name.starts_with("aux.")
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// The fixed sinusoidal position table, `max_pos × d_model`
    /// row-major.
    pub fn positions(&self) -> &[Real] {
        &self.pe
    }

    /// Total scalar count across all trainable parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }
}

struct Builder<'a> {
    params: Vec<Param>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, INIT_STD).expect("std is positive");
        let data = (0..n).map(|_| truncated(&dist, self.rng)).collect();
        self.push(name, shape, data);
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![0.0; n]);
    }

    fn ones(&mut self, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![1.0; n]);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for part in ["wq", "wk", "wv", "wo"] {
            self.weight(&format!("{prefix}.{part}"), &[d, d]);
        }
        for part in ["bq", "bk", "bv", "bo"] {
            self.zeros(&format!("{prefix}.{part}"), &[d]);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.weight(&format!("{prefix}.w1"), &[d, d_ff]);
        self.zeros(&format!("{prefix}.b1"), &[d_ff]);
        self.weight(&format!("{prefix}.w2"), &[d_ff, d]);
        self.zeros(&format!("{prefix}.b2"), &[d]);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.ones(&format!("{prefix}.gain"), &[d]);
        self.zeros(&format!("{prefix}.bias"), &[d]);
    }

    fn push(&mut self, name: &str, shape: &[usize], data: Vec<Real>) {
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
    }
}

fn truncated(dist: &Normal<Real>, rng: &mut ChaCha8Rng) -> Real {
    loop {
        let x = dist.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            return x;
        }
    }
}

/// Standard sinusoidal position encodings: even columns carry
/// `sin(pos / 10000^(i/d))`, odd columns the matching cosine.
fn sinusoidal_table(max_pos: usize, d: usize) -> Vec<Real> {
    let mut pe = vec![0.0; max_pos * d];
    for pos in 0..max_pos {
        for i in 0..d {
            let pair = (i - i % 2) as Real;
            let angle = pos as Real / (10000.0 as Real).powf(pair / d as Real);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

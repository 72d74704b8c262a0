//! Bias-corrected Adam on named parameter slots, with the
//! inverse-square-root warmup schedule and optional global-norm
//! clipping.
//!
//! The optimizer owns moment buffers for exactly the parameters it was
//! created with: the translation set during pretraining, everything
//! during fine-tuning. Slots iterate in name order, so update
//! arithmetic has one deterministic evaluation order.

use std::collections::BTreeMap;

use autodiff::Real;

use crate::model::ModelParams;

use super::{TrainConfig, TrainError, TrainResult};

struct Moments {
    m: Vec<Real>,
    v: Vec<Real>,
}

/// What one update did: the rate it used, the pre-clip gradient norm,
/// and whether clipping fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamStepInfo {
    pub lr: Real,
    pub grad_norm: Real,
    pub clipped: bool,
}

pub struct Optimizer {
    beta1: Real,
    beta2: Real,
    eps: Real,
    lr_scale: Real,
    warmup: usize,
    d_model: usize,
    grad_clip: Option<Real>,
    step: usize,
    slots: BTreeMap<String, Moments>,
}

impl Optimizer {
    /// Creates zeroed moment slots for `names`, which must all exist in
    /// `params`.
    pub fn new<'n, I>(cfg: &TrainConfig, params: &ModelParams, names: I) -> TrainResult<Self>
    where
        I: IntoIterator<Item = &'n str>,
    {
        let mut slots = BTreeMap::new();
        for name in names {
            let param = params
                .get(name)
                .ok_or_else(|| TrainError::UnknownParam(name.to_string()))?;
            slots.insert(
                name.to_string(),
                Moments {
                    m: vec![0.0; param.numel()],
                    v: vec![0.0; param.numel()],
                },
            );
        }
        if slots.is_empty() {
            return Err(TrainError::Empty("optimizer tracks no parameters".into()));
        }
        Ok(Optimizer {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            lr_scale: cfg.lr_scale,
            warmup: cfg.warmup_steps,
            d_model: params.config.d_model,
            grad_clip: cfg.grad_clip,
            step: 0,
            slots,
        })
    }

    /// Updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn tracked(&self) -> usize {
        self.slots.len()
    }

    pub fn has(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    #[cfg(test)]
    fn moments(&self, name: &str) -> (&[Real], &[Real]) {
        let slot = &self.slots[name];
        (&slot.m, &slot.v)
    }

    /// Scheduled rate for a 1-based step number: linear warmup to the
    /// peak at `warmup_steps`, then inverse-square-root decay, scaled
    /// by `lr_scale / sqrt(d_model)`.
    pub fn lr_at(&self, step: usize) -> Real {
        let s = step as Real;
        let w = self.warmup as Real;
        self.lr_scale * (self.d_model as Real).powf(-0.5) * (s.powf(-0.5)).min(s * w.powf(-1.5))
    }

    /// One Adam update. `grads` maps tracked names to gradients; a
    /// missing entry means a zero gradient for that parameter. Checks
    /// every gradient for non-finite values before touching any state,
    /// so a failed call leaves parameters and moments as they were.
    pub fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Vec<Real>>,
    ) -> TrainResult<AdamStepInfo> {
        let mut sq_sum = 0.0;
        for (name, grad) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| TrainError::UnknownParam(name.clone()))?;
            if grad.len() != slot.m.len() {
                return Err(TrainError::Shape(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    grad.len(),
                    slot.m.len()
                )));
            }
            for &g in grad {
                if !g.is_finite() {
                    return Err(TrainError::NonFinite(format!(
                        "gradient for {name} is not finite"
                    )));
                }
                sq_sum += g * g;
            }
        }
        let grad_norm = sq_sum.sqrt();
        let scale = match self.grad_clip {
            Some(cap) if grad_norm > cap => cap / grad_norm,
            _ => 1.0,
        };

        self.step += 1;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, slot) in &mut self.slots {
            let param = params
                .get_mut(name)
                .ok_or_else(|| TrainError::UnknownParam(name.clone()))?;
            let grad = grads.get(name);
            for i in 0..slot.m.len() {
                let g = grad.map_or(0.0, |g| g[i] * scale);
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(AdamStepInfo {
            lr,
            grad_norm,
            clipped: scale < 1.0,
        })
    }
}

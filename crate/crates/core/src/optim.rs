//! Adam with linear learning-rate warmup and optional global-norm clipping.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::ParamGrads;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// Gradients are rescaled so their global norm is at most this value.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup_steps: 4000,
            grad_clip: Some(1.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("adam betas", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("adam_eps", "must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid("grad_clip", "must be positive"));
        }
        Ok(())
    }

    /// Learning rate used for update number `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    /// Returns the gradient norm before clipping.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamGrads, cfg: &AdamConfig) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(invalid("gradients", "parameter count mismatch"));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        let norm = grads.global_norm();
        let clip = match cfg.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let lr = cfg.lr_at(self.step);
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(id);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gv = gv * clip;
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= lr * mh / (libm::sqrt(vh) + cfg.eps);
            }
        }
        Ok(norm)
    }
}

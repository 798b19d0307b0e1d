use alloc::format;
use alloc::vec::Vec;

use super::layers::{Conv1d, Linear};
use super::ModelConfig;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::{join, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Sinusoidal embedding of the diffusion step: `[sin(t·f_i), cos(t·f_i)]`
/// with geometrically spaced frequencies.
pub fn step_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let scale = libm::log(10_000.0) / (half.max(2) - 1) as f64;
    let mut v = Vec::with_capacity(dim);
    for i in 0..half {
        v.push(libm::sin(t as f64 * libm::exp(-scale * i as f64)));
    }
    for i in 0..half {
        v.push(libm::cos(t as f64 * libm::exp(-scale * i as f64)));
    }
    Tensor::row_vector(&v)
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    step_proj: Linear,
    conv: Conv1d,
    cond_proj: Linear,
    out_proj: Linear,
}

/// Non-causal WaveNet-style denoiser predicting the clean mel `x_0`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    input: Linear,
    step_fc1: Linear,
    step_fc2: Linear,
    blocks: Vec<ResidualBlock>,
    skip_proj: Linear,
    output: Linear,
    channels: usize,
    embed_dim: usize,
    n_mels: usize,
    cond_dim: usize,
    steps: usize,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng: &mut Rng) -> Self {
        let ch = c.residual_channels;
        let e = c.diffusion_embed_dim;
        let blocks = (0..c.residual_layers)
            .map(|i| {
                let b = join(name, &format!("blocks.{i}"));
                ResidualBlock {
                    step_proj: Linear::new(store, &join(&b, "step_proj"), e, ch, rng),
                    conv: Conv1d::new(store, &join(&b, "dilated_conv"), ch, c.denoiser_filter, c.denoiser_kernel, c.dilation, rng),
                    cond_proj: Linear::new(store, &join(&b, "cond_proj"), c.cond_dim, c.denoiser_filter, rng),
                    out_proj: Linear::new(store, &join(&b, "out_proj"), ch, 2 * ch, rng),
                }
            })
            .collect();
        Self {
            input: Linear::new(store, &join(name, "input"), c.n_mels, ch, rng),
            step_fc1: Linear::new(store, &join(name, "step_mlp.fc1"), e, 4 * e, rng),
            step_fc2: Linear::new(store, &join(name, "step_mlp.fc2"), 4 * e, e, rng),
            blocks,
            skip_proj: Linear::new(store, &join(name, "skip_proj"), ch, ch, rng),
            output: Linear::new(store, &join(name, "output"), ch, c.n_mels, rng),
            channels: ch,
            embed_dim: e,
            n_mels: c.n_mels,
            cond_dim: c.cond_dim,
            steps: c.diffusion_steps,
        }
    }

    /// Predicts `x_0` from `x_t` (`n × n_mels`), step `t` and condition `c`
    /// (`n × cond_dim`).
    pub fn forward(&self, g: &mut Graph<'_>, x_t: Var, t: usize, cond: Var) -> Result<Var> {
        let (n, m) = g.shape(x_t);
        if m != self.n_mels || g.shape(cond) != (n, self.cond_dim) {
            return Err(shape_err(
                "denoiser_forward",
                format!("x_t {n} x {} and condition {n} x {}", self.n_mels, self.cond_dim),
                format!("x_t {:?}, condition {:?}", (n, m), g.shape(cond)),
            ));
        }
        if t < 1 || t > self.steps {
            return Err(crate::error::Error::OutOfRange {
                what: "diffusion step",
                reason: format!("t = {t} outside [1, {}]", self.steps),
            });
        }
        let ch = self.channels;
        let h = self.input.forward(g, x_t);
        let mut x = g.relu(h);
        let s = g.constant(step_embedding(t, self.embed_dim));
        let s = self.step_fc1.forward(g, s);
        let s = g.swish(s);
        let s = self.step_fc2.forward(g, s);
        let mut skips: Option<Var> = None;
        let inv_sqrt2 = core::f64::consts::FRAC_1_SQRT_2;
        for b in &self.blocks {
            let d = b.step_proj.forward(g, s);
            let y = g.add_row(x, d);
            let y = b.conv.forward(g, y);
            let cp = b.cond_proj.forward(g, cond);
            let y = g.add(y, cp);
            let gate = g.slice_cols(y, 0, ch);
            let filt = g.slice_cols(y, ch, 2 * ch);
            let gate = g.sigmoid(gate);
            let filt = g.tanh(filt);
            let y = g.mul(gate, filt);
            let y = b.out_proj.forward(g, y);
            let res = g.slice_cols(y, 0, ch);
            let skip = g.slice_cols(y, ch, 2 * ch);
            let r = g.add(x, res);
            x = g.scale(r, inv_sqrt2);
            skips = Some(match skips {
                Some(acc) => g.add(acc, skip),
                None => skip,
            });
        }
        let skip = skips.unwrap_or(x);
        let skip = g.scale(skip, 1.0 / libm::sqrt(self.blocks.len().max(1) as f64));
        let h = self.skip_proj.forward(g, skip);
        let h = g.relu(h);
        Ok(self.output.forward(g, h))
    }
}

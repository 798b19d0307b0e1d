//! Cosine-schedule diffusion chain with a clean-data (x0) parameterized
//! reverse process.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    tilde_beta: Vec<f64>,
}

/// Builds the schedule `alpha[t] = cos(π/2 · t/T)` for `t = 0..=T`.
pub fn make_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps < 1 {
        return Err(invalid("steps", "need at least one diffusion step"));
    }
    let mut alpha: Vec<f64> = (0..=steps)
        .map(|t| libm::cos(0.5 * core::f64::consts::PI * t as f64 / steps as f64))
        .collect();
    alpha[0] = 1.0;
    alpha[steps] = 0.0;
    let alpha_bar: Vec<f64> = alpha.iter().map(|a| a * a).collect();
    let mut tilde_beta = alloc::vec![0.0; steps + 1];
    for t in 2..=steps {
        tilde_beta[t] = posterior_coefficients(alpha_bar[t - 1], alpha_bar[t]).variance;
    }
    Ok(DiffusionSchedule {
        steps,
        alpha,
        alpha_bar,
        tilde_beta,
    })
}

/// Weights of `q(x_{t-1} | x_t, x_0)` given `alpha_bar[t-1]` and `alpha_bar[t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub x0: f64,
    pub xt: f64,
    pub variance: f64,
}

pub fn posterior_coefficients(alpha_bar_prev: f64, alpha_bar: f64) -> PosteriorCoefficients {
    let a = if alpha_bar_prev > 0.0 { alpha_bar / alpha_bar_prev } else { 0.0 };
    let denom = 1.0 - alpha_bar;
    if denom <= 0.0 {
        // No noise has been added yet, so x_t already is the clean sample.
        return PosteriorCoefficients {
            x0: 0.0,
            xt: 1.0,
            variance: 0.0,
        };
    }
    PosteriorCoefficients {
        x0: libm::sqrt(alpha_bar_prev) * (1.0 - a) / denom,
        xt: libm::sqrt(a) * (1.0 - alpha_bar_prev) / denom,
        variance: ((1.0 - alpha_bar_prev) / denom * (1.0 - a)).max(0.0),
    }
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn step_ratio(&self, t: usize) -> f64 {
        self.alpha_bar[t] / self.alpha_bar[t - 1]
    }

    pub fn tilde_beta(&self, t: usize) -> f64 {
        self.tilde_beta[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps {
            return Err(Error::OutOfRange {
                what: "diffusion step",
                reason: format!("t = {t} outside [{lo}, {}]", self.steps),
            });
        }
        Ok(())
    }

    /// Coefficients for step `t`, with the final step forced deterministic.
    pub fn posterior(&self, t: usize) -> Result<PosteriorCoefficients> {
        self.check_step(t, 1)?;
        let mut c = posterior_coefficients(self.alpha_bar[t - 1], self.alpha_bar[t]);
        c.variance = self.tilde_beta[t];
        Ok(c)
    }

    /// `alpha[t]·x0 + sqrt(1 − alpha[t]²)·noise`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, noise: &Tensor) -> Result<Tensor> {
        self.check_step(t, 0)?;
        if x0.shape() != noise.shape() {
            return Err(shape_err("q_sample", format!("{:?}", x0.shape()), format!("{:?}", noise.shape())));
        }
        let a = self.alpha[t];
        let s = libm::sqrt((1.0 - a * a).max(0.0));
        Ok(x0.zip_map(noise, |x, n| a * x + s * n))
    }

    pub fn posterior_mean(&self, x_t: &Tensor, x0_hat: &Tensor, t: usize) -> Result<Tensor> {
        let c = self.posterior(t)?;
        if x_t.shape() != x0_hat.shape() {
            return Err(shape_err("posterior", format!("{:?}", x_t.shape()), format!("{:?}", x0_hat.shape())));
        }
        Ok(x0_hat.zip_map(x_t, |x0, xt| c.x0 * x0 + c.xt * xt))
    }

    /// Draws `x_{t-1}` from the posterior given the predicted clean sample.
    pub fn posterior_sample(&self, x_t: &Tensor, x0_hat: &Tensor, t: usize, seed: u64) -> Result<Tensor> {
        let mut mean = self.posterior_mean(x_t, x0_hat, t)?;
        let var = self.tilde_beta[t];
        if var > 0.0 {
            let sd = libm::sqrt(var);
            let mut rng = rng_from_seed(seed);
            for v in mean.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sd * z;
            }
        }
        Ok(mean)
    }

    /// Runs the full reverse chain from `x_T ~ N(0, I)`.
    ///
    /// `denoiser(x_t, t, condition)` must return an estimate of `x_0` with the
    /// same shape as `x_t`.
    pub fn denoise_loop<C: ?Sized>(
        &self,
        shape: (usize, usize),
        condition: &C,
        mut denoiser: impl FnMut(&Tensor, usize, &C) -> Result<Tensor>,
        seed: u64,
    ) -> Result<Tensor> {
        let mut rng = rng_from_seed(seed);
        let mut x = gaussian(shape.0, shape.1, &mut rng);
        for t in (1..=self.steps).rev() {
            let x0_hat = denoiser(&x, t, condition)?;
            if x0_hat.shape() != shape {
                return Err(shape_err("denoiser output", format!("{shape:?}"), format!("{:?}", x0_hat.shape())));
            }
            let step_seed: u64 = rng.random();
            x = self.posterior_sample(&x, &x0_hat, t, step_seed)?;
        }
        Ok(x)
    }
}

/// Standard-normal matrix.
pub fn gaussian<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized by construction")
}

//! Training objectives. Every reconstruction term only looks at masked
//! positions, so values outside the mask never affect a loss or a gradient.
//!
//! Each loss comes in two forms: a plain function returning the value (and,
//! for the `_grad` variants, the gradient with respect to the prediction) and
//! a graph node built with [`Graph::custom_scalar`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::textgrid::MaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_mae: f64,
    pub w_ssim: f64,
    pub w_dur: f64,
    pub w_pitch: f64,
    pub w_bce: f64,
    pub w_focal: f64,
    pub focal_alpha0: f64,
    pub focal_alpha1: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mae: 0.5,
            w_ssim: 0.5,
            w_dur: 0.1,
            w_pitch: 0.1,
            w_bce: 1.0,
            w_focal: 1.0,
            focal_alpha0: 5e-3,
            focal_alpha1: 1.0,
            focal_gamma: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_mae,
            self.w_ssim,
            self.w_dur,
            self.w_pitch,
            self.w_bce,
            self.w_focal,
            self.focal_alpha0,
            self.focal_alpha1,
            self.focal_gamma,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(crate::error::invalid("loss weights", "every weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Individual loss values of one utterance or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mae: f64,
    pub ssim: f64,
    pub duration: f64,
    pub pitch: f64,
    pub bce: f64,
    pub focal: f64,
}

impl LossParts {
    pub fn as_array(&self) -> [f64; 6] {
        [self.mae, self.ssim, self.duration, self.pitch, self.bce, self.focal]
    }

    pub fn add_scaled(&mut self, other: &LossParts, s: f64) {
        self.mae += s * other.mae;
        self.ssim += s * other.ssim;
        self.duration += s * other.duration;
        self.pitch += s * other.pitch;
        self.bce += s * other.bce;
        self.focal += s * other.focal;
    }
}

/// Weighted sum of the parts; the stutter terms count only when enabled.
pub fn total_loss(parts: &LossParts, weights: &LossWeights, stutter_enabled: bool) -> Result<f64> {
    const NAMES: [&str; 6] = ["mae", "ssim", "duration", "pitch", "bce", "focal"];
    for (name, v) in NAMES.iter().zip(parts.as_array()) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss = {v}")));
        }
    }
    let mut total = weights.w_mae * parts.mae
        + weights.w_ssim * parts.ssim
        + weights.w_dur * parts.duration
        + weights.w_pitch * parts.pitch;
    if stutter_enabled {
        total += weights.w_bce * parts.bce + weights.w_focal * parts.focal;
    }
    Ok(total)
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor, mask: &MaskSpec) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?}", b.shape()), format!("{:?}", a.shape())));
    }
    mask.validate(a.rows())
}

/// Mean absolute error over every bin of every masked frame.
pub fn mae_loss(pred: &Tensor, target: &Tensor, mask: &MaskSpec) -> Result<f64> {
    Ok(mae_loss_grad(pred, target, mask)?.0)
}

pub fn mae_loss_grad(pred: &Tensor, target: &Tensor, mask: &MaskSpec) -> Result<(f64, Tensor)> {
    check_same("mae_loss", pred, target, mask)?;
    let mut grad = Tensor::zeros(pred.rows(), pred.cols());
    let count = mask.n_masked_frames() * pred.cols();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for &(s, e) in mask.spans() {
        for f in s..e {
            let (p, t) = (pred.row(f), target.row(f));
            let gr = grad.row_mut(f);
            for c in 0..p.len() {
                let d = p[c] - t[c];
                sum += d.abs();
                gr[c] = if d > 0.0 {
                    inv
                } else if d < 0.0 {
                    -inv
                } else {
                    0.0
                };
            }
        }
    }
    Ok((sum * inv, grad))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// SSIM of one window from its moments, and the partial derivatives of SSIM
/// with respect to `mu_x`, `E[x²]` and `E[xy]`.
fn ssim_terms(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64) -> (f64, f64, f64, f64) {
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cxy = exy - mx * my;
    let a1 = 2.0 * mx * my + SSIM_C1;
    let a2 = 2.0 * cxy + SSIM_C2;
    let b1 = mx * mx + my * my + SSIM_C1;
    let b2 = vx + vy + SSIM_C2;
    let s = a1 * a2 / (b1 * b2);
    let d_mu = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
    let d_exx = -s / b2;
    let d_exy = 2.0 * s / a2;
    (s, d_mu, d_exx, d_exy)
}

/// `out[i][j] = Σ_ab w[a]·w[b]·m[i+a][j+b]` over valid positions.
fn filter_valid(m: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; oh * w];
    for i in 0..oh {
        for a in 0..k {
            let src = &m[(i + a) * w..(i + a + 1) * w];
            let dst = &mut rows[i * w..(i + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += taps[a] * s;
            }
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|b| taps[b] * rows[i * w + j + b]).sum();
        }
    }
    (out, oh, ow)
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], oh: usize, ow: usize, h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let mut rows = vec![0.0; oh * w];
    for i in 0..oh {
        for j in 0..ow {
            let v = g[i * ow + j];
            for b in 0..k {
                rows[i * w + j + b] += taps[b] * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..oh {
        for a in 0..k {
            for j in 0..w {
                out[(i + a) * w + j] += taps[a] * rows[i * w + j];
            }
        }
    }
    out
}

/// Mean SSIM of two equally sized blocks and its gradient w.r.t. `x`.
///
/// Blocks at least as large as the window use the sliding Gaussian window;
/// smaller ones fall back to a single window of global statistics.
pub fn block_ssim_grad(x: &[f64], y: &[f64], h: usize, w: usize) -> (f64, Vec<f64>) {
    let n = h * w;
    if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        let taps = gaussian_window();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let (mx, oh, ow) = filter_valid(x, h, w, &taps);
        let my = filter_valid(y, h, w, &taps).0;
        let exx = filter_valid(&xx, h, w, &taps).0;
        let eyy = filter_valid(&yy, h, w, &taps).0;
        let exy = filter_valid(&xy, h, w, &taps).0;
        let p = oh * ow;
        let inv = 1.0 / p as f64;
        let (mut alpha, mut beta, mut gamma) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        let mut total = 0.0;
        for i in 0..p {
            let (s, dm, dxx, dxy) = ssim_terms(mx[i], my[i], exx[i], eyy[i], exy[i]);
            total += s;
            alpha[i] = dm * inv;
            beta[i] = dxx * inv;
            gamma[i] = dxy * inv;
        }
        let a = filter_valid_adjoint(&alpha, oh, ow, h, w, &taps);
        let b = filter_valid_adjoint(&beta, oh, ow, h, w, &taps);
        let c = filter_valid_adjoint(&gamma, oh, ow, h, w, &taps);
        let grad = (0..n).map(|k| a[k] + 2.0 * x[k] * b[k] + y[k] * c[k]).collect();
        (total * inv, grad)
    } else {
        let inv = 1.0 / n as f64;
        let mx = x.iter().sum::<f64>() * inv;
        let my = y.iter().sum::<f64>() * inv;
        let exx = x.iter().map(|v| v * v).sum::<f64>() * inv;
        let eyy = y.iter().map(|v| v * v).sum::<f64>() * inv;
        let exy = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() * inv;
        let (s, dm, dxx, dxy) = ssim_terms(mx, my, exx, eyy, exy);
        let grad = (0..n).map(|k| inv * (dm + 2.0 * x[k] * dxx + y[k] * dxy)).collect();
        (s, grad)
    }
}

/// Affine map sending the target's range over the masked frames to `[0, 1]`.
fn masked_range(target: &Tensor, mask: &MaskSpec) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(s, e) in mask.spans() {
        for f in s..e {
            for &v in target.row(f) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let range = hi - lo;
    (lo, if range > 1e-12 { 1.0 / range } else { 1.0 })
}

/// `1 − SSIM` over the masked region.
pub fn ssim_loss(pred: &Tensor, target: &Tensor, mask: &MaskSpec) -> Result<f64> {
    Ok(ssim_loss_grad(pred, target, mask)?.0)
}

/// `1 − SSIM` and its gradient with respect to `pred`.
///
/// Both inputs are rescaled with the same affine map, taken from the target's
/// minimum and maximum over the masked frames. Each masked span is scored as
/// one `frames × bins` block; spans are averaged weighted by frame count.
pub fn ssim_loss_grad(pred: &Tensor, target: &Tensor, mask: &MaskSpec) -> Result<(f64, Tensor)> {
    check_same("ssim_loss", pred, target, mask)?;
    let mut grad = Tensor::zeros(pred.rows(), pred.cols());
    let total_frames = mask.n_masked_frames();
    if total_frames == 0 {
        return Ok((0.0, grad));
    }
    let (lo, scale) = masked_range(target, mask);
    let w = pred.cols();
    let mut ssim = 0.0;
    for &(s, e) in mask.spans() {
        let h = e - s;
        let weight = h as f64 / total_frames as f64;
        let x: Vec<f64> = pred.data()[s * w..e * w].iter().map(|v| (v - lo) * scale).collect();
        let y: Vec<f64> = target.data()[s * w..e * w].iter().map(|v| (v - lo) * scale).collect();
        let (v, g) = block_ssim_grad(&x, &y, h, w);
        ssim += weight * v;
        for (dst, gv) in grad.data_mut()[s * w..e * w].iter_mut().zip(g) {
            *dst = -weight * scale * gv;
        }
    }
    Ok((1.0 - ssim, grad))
}

/// Mean squared error over masked positions.
pub fn variance_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(variance_loss_grad(pred, target, mask)?.0)
}

pub fn variance_loss_grad(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(shape_err(
            "variance_loss",
            format!("{} targets and mask flags", pred.len()),
            format!("{} targets, {} flags", target.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut grad = vec![0.0; pred.len()];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - target[i];
            sum += d * d;
            grad[i] = 2.0 * d * inv;
        }
    }
    Ok((sum * inv, grad))
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean BCE and mean focal loss of per-frame stutter probabilities, with
/// gradients of each with respect to the probabilities.
pub fn stutter_loss_grad(
    probs: &[f64],
    labels: &[u8],
    weights: &LossWeights,
) -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
    if probs.len() != labels.len() {
        return Err(shape_err("stutter_loss", format!("{} labels", probs.len()), format!("{}", labels.len())));
    }
    let n = probs.len();
    if n == 0 {
        return Ok(((0.0, Vec::new()), (0.0, Vec::new())));
    }
    let inv = 1.0 / n as f64;
    let gamma = weights.focal_gamma;
    let (mut bce, mut focal) = (0.0, 0.0);
    let (mut g_bce, mut g_focal) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let p = probs[i];
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "stutter probability",
                reason: format!("{p} at frame {i}"),
            });
        }
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let (py, sign, alpha) = if labels[i] != 0 {
            (pc, 1.0, weights.focal_alpha1)
        } else {
            (1.0 - pc, -1.0, weights.focal_alpha0)
        };
        let nll = -libm::log(py);
        let m = libm::pow(1.0 - py, gamma);
        bce += nll;
        focal += alpha * m * nll;
        if !clamped {
            g_bce[i] = sign * (-1.0 / py) * inv;
            let dm = if gamma > 0.0 { gamma * libm::pow(1.0 - py, gamma - 1.0) } else { 0.0 };
            g_focal[i] = sign * alpha * (dm * libm::log(py) - m / py) * inv;
        }
    }
    Ok(((bce * inv, g_bce), (focal * inv, g_focal)))
}

/// `(bce, focal)`.
pub fn stutter_loss(probs: &[f64], labels: &[u8], weights: &LossWeights) -> Result<(f64, f64)> {
    let ((b, _), (f, _)) = stutter_loss_grad(probs, labels, weights)?;
    Ok((b, f))
}

/// Graph node for [`mae_loss`].
pub fn mae_node(g: &mut Graph<'_>, pred: Var, target: &Tensor, mask: &MaskSpec) -> Result<Var> {
    let (v, grad) = mae_loss_grad(g.value(pred), target, mask)?;
    Ok(g.custom_scalar(pred, v, grad))
}

/// Graph node for [`ssim_loss`].
pub fn ssim_node(g: &mut Graph<'_>, pred: Var, target: &Tensor, mask: &MaskSpec) -> Result<Var> {
    let (v, grad) = ssim_loss_grad(g.value(pred), target, mask)?;
    Ok(g.custom_scalar(pred, v, grad))
}

/// Graph node for [`variance_loss`] on an `n × 1` prediction.
pub fn variance_node(g: &mut Graph<'_>, pred: Var, target: &[f64], mask: &[bool]) -> Result<Var> {
    let (v, grad) = variance_loss_grad(g.value(pred).data(), target, mask)?;
    let grad = Tensor::column(&grad);
    Ok(g.custom_scalar(pred, v, grad))
}

/// Graph nodes `(bce, focal)` for `n × 2` class probabilities.
pub fn stutter_nodes(g: &mut Graph<'_>, probs: Var, labels: &[u8], weights: &LossWeights) -> Result<(Var, Var)> {
    let n = g.shape(probs).0;
    let p = g.slice_cols(probs, 1, 2);
    let ((b, gb), (f, gf)) = stutter_loss_grad(g.value(p).data(), labels, weights)?;
    debug_assert_eq!(gb.len(), n);
    let bce = g.custom_scalar(p, b, Tensor::column(&gb));
    let focal = g.custom_scalar(p, f, Tensor::column(&gf));
    Ok((bce, focal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::collections::BTreeSet;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng_from_seed(seed);
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn mask(spans: &[(usize, usize)]) -> MaskSpec {
        MaskSpec::from_spans(spans.iter().copied(), BTreeSet::new())
    }

    #[test]
    fn mae_cases() {
        let x = random(6, 4, 1);
        let m = mask(&[(1, 3), (4, 6)]);
        assert_eq!(mae_loss(&x, &x, &m).unwrap(), 0.0);
        let shifted = x.map(|v| v + 0.5);
        assert!((mae_loss(&shifted, &x, &m).unwrap() - 0.5).abs() < 1e-12);
        let y = random(6, 4, 2);
        let mut sum = 0.0;
        let mut count = 0;
        for f in [1, 2, 4, 5] {
            for c in 0..4 {
                sum += (x.get(f, c) - y.get(f, c)).abs();
                count += 1;
            }
        }
        assert!((mae_loss(&x, &y, &m).unwrap() - sum / count as f64).abs() < 1e-12);
        assert_eq!(mae_loss(&x, &y, &MaskSpec::empty()).unwrap(), 0.0);
    }

    #[test]
    fn variance_cases() {
        assert_eq!(variance_loss(&[1.0, 2.0], &[1.0, 2.0], &[true, true]).unwrap(), 0.0);
        assert_eq!(variance_loss(&[3.0, 9.0], &[1.0, 0.0], &[true, false]).unwrap(), 4.0);
        assert_eq!(variance_loss(&[3.0], &[1.0], &[false]).unwrap(), 0.0);
        let mut r = rng_from_seed(4);
        let p: Vec<f64> = (0..20).map(|_| r.random()).collect();
        let t: Vec<f64> = (0..20).map(|_| r.random()).collect();
        let m: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let mut s = 0.0;
        let mut n = 0.0;
        for i in 0..20 {
            if m[i] {
                s += (p[i] - t[i]) * (p[i] - t[i]);
                n += 1.0;
            }
        }
        assert!((variance_loss(&p, &t, &m).unwrap() - s / n).abs() < 1e-12);
        assert!(variance_loss(&p, &t[..3], &m).is_err());
    }

    #[test]
    fn stutter_loss_hand_values() {
        let w = LossWeights::default();
        let ln2 = core::f64::consts::LN_2;
        let (b, f) = stutter_loss(&[0.5], &[1], &w).unwrap();
        assert!((b - ln2).abs() < 1e-12);
        assert!((f - 0.125 * ln2).abs() < 1e-12);
        assert!((f - 0.08664).abs() < 1e-5);
        let (_, f) = stutter_loss(&[0.5], &[0], &w).unwrap();
        assert!((f - 5e-3 * 0.125 * ln2).abs() < 1e-15);
        let (b, f) = stutter_loss(&[1.0, 0.0], &[1, 0], &w).unwrap();
        assert!(b < 1e-6 && f < 1e-6);
    }

    proptest! {
        #[test]
        fn focal_never_exceeds_bce(p in 0.0f64..1.0, y in 0u8..2) {
            let w = LossWeights::default();
            let (b, f) = stutter_loss(&[p], &[y], &w).unwrap();
            prop_assert!(f <= b + 1e-15);
            prop_assert!(f >= 0.0 && b >= 0.0);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossParts::default(), &w, true).unwrap(), 0.0);
        let p = LossParts {
            mae: 1.0,
            ssim: 1.0,
            duration: 1.0,
            pitch: 1.0,
            bce: 0.0,
            focal: 0.0,
        };
        assert!((total_loss(&p, &w, true).unwrap() - 1.2).abs() < 1e-12);
        let p = LossParts {
            mae: 0.3,
            ssim: 0.2,
            duration: 1.5,
            pitch: 0.7,
            bce: 0.9,
            focal: 0.05,
        };
        let expect = 0.5 * 0.3 + 0.5 * 0.2 + 0.1 * 1.5 + 0.1 * 0.7 + 0.9 + 0.05;
        assert_eq!(total_loss(&p, &w, true).unwrap(), expect);
        assert_eq!(total_loss(&p, &w, false).unwrap(), 0.5 * 0.3 + 0.5 * 0.2 + 0.1 * 1.5 + 0.1 * 0.7);
        let bad = LossParts { mae: f64::NAN, ..p };
        assert!(total_loss(&bad, &w, true).is_err());
    }

    /// Sliding-window SSIM written directly from the definition with a full
    /// 2D weight matrix.
    fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
        let k = 11usize;
        let mut g1 = [0.0; 11];
        for (i, v) in g1.iter_mut().enumerate() {
            let d = i as f64 - 5.0;
            *v = libm::exp(-d * d / 4.5);
        }
        let s: f64 = g1.iter().sum();
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..=h - k {
            for j in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let wt = g1[a] * g1[b] / (s * s);
                        let (xv, yv) = (x[(i + a) * w + j + b], y[(i + a) * w + j + b]);
                        mx += wt * xv;
                        my += wt * yv;
                        sxx += wt * xv * xv;
                        syy += wt * yv * yv;
                        sxy += wt * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let c = sxy - mx * my;
                total += (2.0 * mx * my + 1e-4) * (2.0 * c + 9e-4) / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let x = random(14, 16, 5).map(|v| 0.5 + 0.5 * v);
        let y = random(14, 16, 6).map(|v| 0.5 + 0.5 * v);
        let (s, _) = block_ssim_grad(x.data(), y.data(), 14, 16);
        assert!((s - ssim_oracle(x.data(), y.data(), 14, 16)).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = random(12, 20, 7);
        let full = mask(&[(0, 12)]);
        assert!(ssim_loss(&x, &x, &full).unwrap().abs() < 1e-12);
        // an anti-correlated prediction yields negative SSIM
        let flipped = x.map(|v| -v);
        let l = ssim_loss(&flipped, &x, &full).unwrap();
        assert!(l > 1.0, "loss {l}");
        let short = mask(&[(2, 6)]);
        assert!(ssim_loss(&x, &x, &short).unwrap().abs() < 1e-12);
        assert!(ssim_loss(&flipped, &x, &short).unwrap() > 1.0);
        assert_eq!(ssim_loss(&flipped, &x, &MaskSpec::empty()).unwrap(), 0.0);
    }

    fn fd_check(f: impl Fn(&Tensor) -> (f64, Tensor), x: &Tensor) {
        let (_, g) = f(x);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let num = (f(&p).0 - f(&m).0) / (2.0 * h);
            let ana = g.data()[i];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            assert!((num - ana).abs() / denom < 1e-3 || (num - ana).abs() < 1e-8, "entry {i}: {num} vs {ana}");
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let y = random(16, 12, 8);
        let x = random(16, 12, 9);
        let m = mask(&[(0, 12), (13, 16)]);
        fd_check(|p| ssim_loss_grad(p, &y, &m).unwrap(), &x);
    }

    #[test]
    fn stutter_gradient_matches_finite_differences() {
        let w = LossWeights::default();
        let labels = [1u8, 0, 1, 0, 0];
        let p = Tensor::column(&[0.3, 0.6, 0.9, 0.2, 0.45]);
        fd_check(
            |p| {
                let ((b, gb), (f, gf)) = stutter_loss_grad(p.data(), &labels, &w).unwrap();
                let g: Vec<f64> = gb.iter().zip(&gf).map(|(a, b)| a + b).collect();
                (b + f, Tensor::column(&g))
            },
            &p,
        );
    }

    #[test]
    fn losses_ignore_values_outside_the_mask() {
        let x = random(14, 12, 10);
        let y = random(14, 12, 11);
        let m = mask(&[(3, 9)]);
        let mut y2 = y.clone();
        for f in (0..3).chain(9..14) {
            for c in 0..12 {
                y2.set(f, c, 100.0 * (f + c) as f64);
            }
        }
        assert_eq!(mae_loss_grad(&x, &y, &m).unwrap(), mae_loss_grad(&x, &y2, &m).unwrap());
        assert_eq!(ssim_loss_grad(&x, &y, &m).unwrap(), ssim_loss_grad(&x, &y2, &m).unwrap());
    }
}

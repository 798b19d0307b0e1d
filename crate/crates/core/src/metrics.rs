//! Spectrogram-domain objective metrics: mel cepstral distortion, duration
//! and pitch errors, and frame-level stutter localization scores.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Cepstral order used for MCD.
pub const MCD_ORDER: usize = 34;

/// Per-frame cepstra `c_0..=c_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct CepstralSequence {
    pub coeffs: Tensor,
}

impl CepstralSequence {
    pub fn order(&self) -> usize {
        self.coeffs.cols().saturating_sub(1)
    }

    pub fn n_frames(&self) -> usize {
        self.coeffs.rows()
    }
}

/// Orthonormal DCT-II of each log-mel frame, truncated to `order + 1`
/// coefficients.
pub fn mel_cepstrum(log_mel: &Tensor, order: usize) -> Result<CepstralSequence> {
    let n = log_mel.cols();
    if order + 1 > n {
        return Err(invalid("order", format!("order {order} needs more than {n} mel bins")));
    }
    // basis[k][j] = s_k cos(π k (2j + 1) / 2N)
    let mut basis = Tensor::zeros(n, order + 1);
    for k in 0..=order {
        let s = if k == 0 { libm::sqrt(1.0 / n as f64) } else { libm::sqrt(2.0 / n as f64) };
        for j in 0..n {
            let arg = core::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2 * n) as f64;
            basis.set(j, k, s * libm::cos(arg));
        }
    }
    Ok(CepstralSequence {
        coeffs: log_mel.matmul(&basis)?,
    })
}

/// `10 / ln 10 · sqrt(2 Σ_{i=1..L} (a_i − b_i)²)` per frame, averaged over
/// frames. Coefficient 0 is left out.
pub fn mcd(a: &CepstralSequence, b: &CepstralSequence) -> Result<f64> {
    if a.coeffs.shape() != b.coeffs.shape() {
        return Err(shape_err("mcd", format!("{:?}", a.coeffs.shape()), format!("{:?}", b.coeffs.shape())));
    }
    let frames = a.n_frames();
    if frames == 0 {
        return Err(invalid("mcd", "no frames to compare"));
    }
    let k = 10.0 / core::f64::consts::LN_10;
    let mut total = 0.0;
    for f in 0..frames {
        let s: f64 = a.coeffs.row(f)[1..]
            .iter()
            .zip(&b.coeffs.row(f)[1..])
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += k * libm::sqrt(2.0 * s);
    }
    Ok(total / frames as f64)
}

/// Mean squared error between paired values.
fn mse(pred: &[f64], truth: &[f64], what: &'static str) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(shape_err(what, format!("{} values", truth.len()), format!("{}", pred.len())));
    }
    if pred.is_empty() {
        return Err(invalid(what, "nothing to compare"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// MSE of word durations in milliseconds.
pub fn duration_error(pred_ms: &[f64], true_ms: &[f64]) -> Result<f64> {
    mse(pred_ms, true_ms, "duration_error")
}

/// MSE of per-utterance mean F0 (Hz).
pub fn pitch_error(pred_mean_f0: &[f64], true_mean_f0: &[f64]) -> Result<f64> {
    mse(pred_mean_f0, true_mean_f0, "pitch_error")
}

/// Summed frame durations per word, in milliseconds.
pub fn word_durations_ms(durations: &[usize], words: &[usize], frame_ms: f64) -> Result<Vec<f64>> {
    if durations.len() != words.len() {
        return Err(shape_err("word_durations", format!("{} word indices", durations.len()), format!("{}", words.len())));
    }
    let n_words = words.last().map_or(0, |w| w + 1);
    let mut out = alloc::vec![0.0; n_words];
    for (&d, &w) in durations.iter().zip(words) {
        out[w] += d as f64 * frame_ms;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub accuracy: f64,
    /// Zero when no frame was predicted as stutter.
    pub precision: f64,
    pub precision_defined: bool,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Frame accuracy and stutter-class precision.
pub fn stutter_localization_scores(pred: &[u8], truth: &[u8]) -> Result<LocalizationScores> {
    if pred.len() != truth.len() {
        return Err(shape_err("stutter_localization", format!("{} labels", truth.len()), format!("{}", pred.len())));
    }
    let (mut tp, mut fp, mut tn, mut fnn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let n = pred.len().max(1) as f64;
    let defined = tp + fp > 0;
    Ok(LocalizationScores {
        accuracy: (tp + tn) as f64 / n,
        precision: if defined { tp as f64 / (tp + fp) as f64 } else { 0.0 },
        precision_defined: defined,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fnn,
    })
}

//! Short-time objective intelligibility: one-third octave band envelopes of
//! clean and degraded speech are compared over 384 ms segments by a
//! correlation coefficient after per-segment normalization and clipping.

use rubato::{FftFixedInOut, Resampler};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{validation, AppError, Result};

pub const STOI_SAMPLE_RATE: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per analysis segment (384 ms).
pub const SEGMENT_FRAMES: usize = 30;
const BETA_DB: f64 = -15.0;
const DYNAMIC_RANGE_DB: f64 = 40.0;
const EPS: f64 = 1e-12;

/// Band-limited resampling with rubato, delay-compensated and trimmed to
/// `round(len * to / from)` samples.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to {
        return Ok(samples.to_vec());
    }
    let chunk = 1024;
    let mut rs = FftFixedInOut::<f64>::new(from as usize, to as usize, chunk, 1)
        .map_err(|e| AppError::Runtime(format!("resampler: {e}")))?;
    let want = (samples.len() as f64 * to as f64 / from as f64).round() as usize;
    let delay = rs.output_delay();
    let mut out: Vec<f64> = Vec::with_capacity(want + delay + chunk);
    let mut pos = 0;
    while out.len() < want + delay {
        let need = rs.input_frames_next();
        let mut block = vec![0.0; need];
        if pos < samples.len() {
            let end = (pos + need).min(samples.len());
            block[..end - pos].copy_from_slice(&samples[pos..end]);
        }
        pos += need;
        let res = rs
            .process(&[block], None)
            .map_err(|e| AppError::Runtime(format!("resampler: {e}")))?;
        out.extend_from_slice(&res[0]);
    }
    Ok(out[delay..delay + want].to_vec())
}

/// Hann window of length `n + 2` without its zero end points.
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..).map(move |i| i * hop).take_while(move |&s| s + FRAME <= len)
}

/// Drops frames of `x` more than 40 dB below its loudest frame, applying
/// the same selection to `y`, and overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = FRAME / 2;
    let w = stoi_window(FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), hop).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| e > max - DYNAMIC_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let len = if keep.is_empty() { 0 } else { (keep.len() - 1) * hop + FRAME };
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (j, &s) in keep.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * hop + i] += w[i] * x[s + i];
            ys[j * hop + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Power spectra of half-overlapping frames, `[frame][bin]`.
fn power_frames(x: &[f64]) -> Vec<Vec<f64>> {
    let w = stoi_window(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    frame_starts(x.len(), FRAME / 2)
        .map(|s| {
            let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
            for i in 0..FRAME {
                buf[i] = Complex::new(w[i] * x[s + i], 0.0);
            }
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Bin ranges `[lo, hi)` of the one-third octave bands.
pub fn third_octave_bands() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2)
        .map(|k| k as f64 * STOI_SAMPLE_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..N_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// `[band][frame]` envelopes.
fn band_envelopes(power: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| power.iter().map(|p| p[lo..hi].iter().sum::<f64>().sqrt()).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// STOI of `degraded` against `clean`; both must share length and rate.
pub fn stoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(validation(format!(
            "stoi needs equal lengths, got {} and {}",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.sample_rate != degraded.sample_rate {
        return Err(validation("stoi needs equal sample rates"));
    }
    let x = resample(&clean.samples, clean.sample_rate, STOI_SAMPLE_RATE)?;
    let y = resample(&degraded.samples, degraded.sample_rate, STOI_SAMPLE_RATE)?;
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xe = band_envelopes(&power_frames(&x), &bands);
    let ye = band_envelopes(&power_frames(&y), &bands);
    let n_frames = xe[0].len();
    if n_frames < SEGMENT_FRAMES {
        return Err(validation(format!(
            "signal too short for stoi: {n_frames} active frames, need {SEGMENT_FRAMES}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT_FRAMES..=n_frames {
        for j in 0..N_BANDS {
            let xs = &xe[j][m - SEGMENT_FRAMES..m];
            let ys = &ye[j][m - SEGMENT_FRAMES..m];
            let alpha = norm(xs) / (norm(ys) + EPS);
            let mut yp: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| (y * alpha).min(x * clip)).collect();
            let mut xc = xs.to_vec();
            let my = yp.iter().sum::<f64>() / SEGMENT_FRAMES as f64;
            let mx = xc.iter().sum::<f64>() / SEGMENT_FRAMES as f64;
            yp.iter_mut().for_each(|v| *v -= my);
            xc.iter_mut().for_each(|v| *v -= mx);
            let (ny, nx) = (norm(&yp) + EPS, norm(&xc) + EPS);
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>() / (ny * nx);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

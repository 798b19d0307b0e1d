//! Short-time Fourier analysis, the mel filterbank, log-mel features and
//! autocorrelation pitch tracking.

use std::sync::Arc;

use fluentedit_core::audio::{AudioConfig, MelSpectrogram, PitchContour};
use fluentedit_core::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{validation, Result};

/// Mono samples in [-1, 1] with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

fn check_input(wave: &Waveform, cfg: &AudioConfig) -> Result<()> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(validation("empty waveform"));
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(validation(format!(
            "sample rate {} Hz does not match the configured {} Hz",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    Ok(())
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Reflect-pads `samples` by `pad` on both sides.
pub fn reflect_pad(samples: &[f64], pad: usize) -> Vec<f64> {
    if samples.is_empty() {
        return vec![0.0; 2 * pad];
    }
    (0..samples.len() + 2 * pad)
        .map(|i| samples[reflect(i as isize - pad as isize, samples.len())])
        .collect()
}

/// Centered STFT with `ceil(len / hop)` frames: frame `f` is centred on
/// sample `f * hop`.
pub struct Stft {
    pub win_size: usize,
    pub hop_size: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(win_size: usize, hop_size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            win_size,
            hop_size,
            window: hann(win_size),
            forward: planner.plan_fft_forward(win_size),
            inverse: planner.plan_fft_inverse(win_size),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.win_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex spectra, one `Vec` of `n_bins` per frame.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n_frames = samples.len().div_ceil(self.hop_size);
        let padded = reflect_pad(samples, self.win_size / 2);
        let mut buf = vec![Complex::new(0.0, 0.0); self.win_size];
        (0..n_frames)
            .map(|f| {
                let start = f * self.hop_size;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(padded[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], trimmed to
    /// `n_frames * hop` samples.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let n = self.win_size;
        let pad = n / 2;
        let total = spectra.len() * self.hop_size;
        let mut out = vec![0.0; total + n];
        let mut norm = vec![0.0; total + n];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (f, spec) in spectra.iter().enumerate() {
            buf[..spec.len()].copy_from_slice(spec);
            for k in 1..n - spec.len() + 1 {
                buf[n - k] = spec[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = f * self.hop_size;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        (0..total)
            .map(|i| {
                let d = norm[i + pad];
                if d > 1e-8 {
                    out[i + pad] / d
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * f_sp
    }
}

/// Area-normalized triangular filters on the Slaney mel scale,
/// `n_mels × (win/2 + 1)`.
pub fn mel_filterbank(cfg: &AudioConfig) -> Tensor {
    let n_bins = cfg.win_size / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(cfg.n_mels, n_bins);
    for m in 0..cfg.n_mels {
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        let norm = 2.0 / (r - l);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.win_size as f64;
            let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
            fb.set(m, k, w * norm);
        }
    }
    fb
}

/// Centre frequency of each mel band in Hz.
pub fn mel_center_frequencies(cfg: &AudioConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Frame-by-bin magnitudes.
pub fn magnitudes(spectra: &[Vec<Complex<f64>>]) -> Tensor {
    let cols = spectra.first().map_or(0, Vec::len);
    let mut out = Tensor::zeros(spectra.len(), cols);
    for (f, s) in spectra.iter().enumerate() {
        for (k, c) in s.iter().enumerate() {
            out.set(f, k, c.norm());
        }
    }
    out
}

/// Magnitude STFT, mel filterbank, natural log with floor.
pub fn mel_spectrogram(wave: &Waveform, cfg: &AudioConfig) -> Result<MelSpectrogram> {
    check_input(wave, cfg)?;
    let stft = Stft::new(cfg.win_size, cfg.hop_size);
    let mags = magnitudes(&stft.analyze(&wave.samples));
    let fb = mel_filterbank(cfg);
    let mel = mags.matmul(&fb.transpose())?;
    let floor = cfg.log_floor;
    Ok(MelSpectrogram {
        frames: mel.map(|v| v.max(floor).ln()),
        config: cfg.clone(),
    })
}

pub const PITCH_MIN_HZ: f64 = 60.0;
pub const PITCH_MAX_HZ: f64 = 500.0;
pub const VOICING_THRESHOLD: f64 = 0.45;
/// Frames quieter than this RMS are unvoiced regardless of periodicity.
const SILENCE_RMS: f64 = 1e-4;
/// A shorter lag wins if its correlation is within this factor of the best.
const OCTAVE_TOLERANCE: f64 = 0.9;

/// Normalized autocorrelation `r(τ)` of one analysis window for lags
/// `0..=max_lag`, computed through the power spectrum.
fn normalized_autocorrelation(frame: &[f64], max_lag: usize, fft: &dyn Fft<f64>, ifft: &dyn Fft<f64>) -> Vec<f64> {
    let n = frame.len();
    let size = fft.len();
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex::new(b.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + frame[i] * frame[i];
    }
    (0..=max_lag.min(n - 1))
        .map(|lag| {
            let cross = buf[lag].re / size as f64;
            let e0 = prefix[n - lag];
            let e1 = prefix[n] - prefix[lag];
            let d = (e0 * e1).sqrt();
            if d > 1e-20 {
                cross / d
            } else {
                0.0
            }
        })
        .collect()
}

/// Picks the pitch lag in `min_lag..=max_lag`: the shortest local maximum
/// whose correlation is within [`OCTAVE_TOLERANCE`] of the best one.
/// Returns the refined lag and its correlation.
pub fn pick_lag(r: &[f64], min_lag: usize, max_lag: usize) -> Option<(f64, f64)> {
    let max_lag = max_lag.min(r.len().saturating_sub(2));
    if min_lag < 1 || min_lag > max_lag {
        return None;
    }
    let best = (min_lag..=max_lag).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return None;
    }
    let lag = (min_lag..=max_lag)
        .find(|&l| r[l] >= OCTAVE_TOLERANCE * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])?;
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some((lag as f64 + shift, b))
}

/// Frame-level F0 by normalized autocorrelation over a window of
/// `win_size` samples centred on each frame; 0 marks unvoiced frames.
pub fn extract_pitch(wave: &Waveform, cfg: &AudioConfig) -> Result<PitchContour> {
    check_input(wave, cfg)?;
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / PITCH_MAX_HZ).floor() as usize;
    let max_lag = (sr / PITCH_MIN_HZ).ceil() as usize;
    let n = cfg.win_size;
    let n_frames = cfg.n_frames(wave.len());
    let padded = reflect_pad(&wave.samples, n / 2);
    let mut planner = FftPlanner::new();
    let size = (2 * n).next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let f0 = (0..n_frames)
        .map(|f| {
            let frame = &padded[f * cfg.hop_size..f * cfg.hop_size + n];
            let mean = frame.iter().sum::<f64>() / n as f64;
            let centred: Vec<f64> = frame.iter().map(|x| x - mean).collect();
            let rms = (centred.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            if rms < SILENCE_RMS {
                return 0.0;
            }
            let r = normalized_autocorrelation(&centred, max_lag + 1, fft.as_ref(), ifft.as_ref());
            match pick_lag(&r, min_lag, max_lag) {
                Some((lag, corr)) if corr >= VOICING_THRESHOLD => sr / lag,
                _ => 0.0,
            }
        })
        .collect();
    Ok(PitchContour { f0 })
}

//! Phase reconstruction from log-mel spectrograms: the mel filterbank is
//! pseudo-inverted to linear magnitudes and Griffin-Lim iterations recover
//! a consistent phase starting from zero phase.

use fluentedit_core::audio::AudioConfig;
use fluentedit_core::Tensor;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use crate::dsp::{mel_filterbank, Stft, Waveform};
use crate::error::{AppError, Result};

pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;

/// Griffin-Lim vocoder bound to one audio configuration.
pub struct Vocoder {
    config: AudioConfig,
    stft: Stft,
    /// `n_mels × n_bins` pseudo-inverse, stored transposed for row-major
    /// frame products.
    inverse_t: Tensor,
}

impl Vocoder {
    pub fn new(config: &AudioConfig) -> Result<Self> {
        config.validate()?;
        let fb = mel_filterbank(config);
        let m = DMatrix::from_row_slice(fb.rows(), fb.cols(), fb.data());
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| AppError::Runtime(format!("mel filterbank pseudo-inverse: {e}")))?;
        let mut inverse_t = Tensor::zeros(fb.rows(), fb.cols());
        for r in 0..fb.rows() {
            for c in 0..fb.cols() {
                inverse_t.set(r, c, pinv[(c, r)]);
            }
        }
        Ok(Self {
            config: config.clone(),
            stft: Stft::new(config.win_size, config.hop_size),
            inverse_t,
        })
    }

    /// Linear magnitudes implied by a log-mel spectrogram.
    pub fn linear_magnitudes(&self, log_mel: &Tensor) -> Result<Tensor> {
        if log_mel.cols() != self.config.n_mels {
            return Err(AppError::Validation(format!(
                "mel has {} bins, vocoder expects {}",
                log_mel.cols(),
                self.config.n_mels
            )));
        }
        let mel = log_mel.map(f64::exp);
        Ok(mel.matmul(&self.inverse_t)?.map(|v| v.max(0.0)))
    }

    /// Waveform of `n_frames * hop` samples.
    pub fn vocode(&self, log_mel: &Tensor, n_iter: usize) -> Result<Waveform> {
        let mags = self.linear_magnitudes(log_mel)?;
        if mags.rows() == 0 {
            return Ok(Waveform::new(Vec::new(), self.config.sample_rate));
        }
        let bins = mags.cols();
        let mut spectra: Vec<Vec<Complex<f64>>> = (0..mags.rows())
            .map(|f| mags.row(f).iter().map(|&m| Complex::new(m, 0.0)).collect())
            .collect();
        let mut samples = self.stft.synthesize(&spectra);
        for _ in 0..n_iter {
            let rebuilt = self.stft.analyze(&samples);
            for (f, frame) in spectra.iter_mut().enumerate() {
                for k in 0..bins {
                    let c = rebuilt[f][k];
                    let norm = c.norm();
                    let phase = if norm > 1e-12 { c / norm } else { Complex::new(1.0, 0.0) };
                    frame[k] = phase * mags.get(f, k);
                }
            }
            samples = self.stft.synthesize(&spectra);
        }
        Ok(Waveform::new(samples, self.config.sample_rate))
    }
}

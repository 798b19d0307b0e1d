//! Feature-extraction configuration and the spectrogram / pitch containers.
//! The transforms themselves need an FFT and live in the `fluentedit` crate.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub win_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            win_size: 1024,
            hop_size: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 || self.win_size < self.hop_size {
            return Err(invalid(
                "audio config",
                format!("need win_size >= hop_size > 0, got {} / {}", self.win_size, self.hop_size),
            ));
        }
        if self.n_mels == 0 {
            return Err(invalid("audio config", "n_mels must be positive"));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 || self.fmin < 0.0 || self.fmin >= self.fmax {
            return Err(invalid(
                "audio config",
                format!("need 0 <= fmin < fmax <= sr/2, got {} / {}", self.fmin, self.fmax),
            ));
        }
        if !(self.log_floor > 0.0) {
            return Err(invalid("audio config", "log_floor must be positive"));
        }
        Ok(())
    }

    /// Frames produced for `n_samples` under centered framing.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop_size)
    }

    /// Centre time of frame `f`, in seconds.
    pub fn frame_center_sec(&self, f: usize) -> f64 {
        (f * self.hop_size) as f64 / self.sample_rate as f64
    }

    /// Nearest frame boundary for a time in seconds.
    pub fn sec_to_frame(&self, sec: f64) -> usize {
        let f = libm::round(sec * self.sample_rate as f64 / self.hop_size as f64);
        if f < 0.0 {
            0
        } else {
            f as usize
        }
    }

    pub fn frame_to_sec(&self, f: usize) -> f64 {
        self.frame_center_sec(f)
    }

    pub fn frame_ms(&self) -> f64 {
        1000.0 * self.hop_size as f64 / self.sample_rate as f64
    }

    pub fn silence_level(&self) -> f64 {
        libm::log(self.log_floor)
    }
}

/// Log-mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor,
    pub config: AudioConfig,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// Frame-level fundamental frequency in Hz; 0 marks unvoiced frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PitchContour {
    pub f0: Vec<f64>,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    /// Mean F0 over voiced frames, `None` when nothing is voiced.
    pub fn mean_voiced(&self) -> Option<f64> {
        let voiced: Vec<f64> = self.f0.iter().copied().filter(|&f| f > 0.0).collect();
        if voiced.is_empty() {
            None
        } else {
            Some(voiced.iter().sum::<f64>() / voiced.len() as f64)
        }
    }
}

/// Per-bin mean and a global scale used to normalize log-mels for the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelNormalizer {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl MelNormalizer {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; n_mels],
            std: 1.0,
        }
    }

    /// Statistics over every frame of every spectrogram.
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mels: Vec<&Tensor> = mels.into_iter().collect();
        for m in &mels {
            if sum.is_empty() {
                sum = alloc::vec![0.0; m.cols()];
            }
            for r in 0..m.rows() {
                for (s, v) in sum.iter_mut().zip(m.row(r)) {
                    *s += v;
                }
            }
            count += m.rows();
        }
        if count == 0 {
            return Err(invalid("mels", "cannot fit normalization on zero frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = 0.0;
        for m in &mels {
            for r in 0..m.rows() {
                for (v, mu) in m.row(r).iter().zip(&mean) {
                    sq += (v - mu) * (v - mu);
                }
            }
        }
        let std = libm::sqrt(sq / (count * mean.len()) as f64).max(1e-3);
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, mel: &Tensor) -> Tensor {
        let mut out = mel.clone();
        for r in 0..out.rows() {
            for (v, mu) in out.row_mut(r).iter_mut().zip(&self.mean) {
                *v = (*v - mu) / self.std;
            }
        }
        out
    }

    pub fn denormalize(&self, mel: &Tensor) -> Tensor {
        let mut out = mel.clone();
        for r in 0..out.rows() {
            for (v, mu) in out.row_mut(r).iter_mut().zip(&self.mean) {
                *v = *v * self.std + mu;
            }
        }
        out
    }
}

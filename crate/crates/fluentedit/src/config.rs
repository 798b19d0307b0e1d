//! File-level defaults for every subcommand, read from TOML.

use std::path::{Path, PathBuf};

use fluentedit_core::losses::LossWeights;
use fluentedit_core::optim::AdamConfig;
use fluentedit_core::train::TrainConfig;
use fluentedit_core::AudioConfig;
use serde::{Deserialize, Serialize};

use crate::error::{validation, AppError, Result};
use crate::synthdata::SynthConfig;
use crate::training::ModelPreset;
use crate::vocoder::DEFAULT_GRIFFIN_LIM_ITERS;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FLUENTEDIT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct CliConfig {
    pub seed: u64,
    pub audio: AudioConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub synth: SynthConfig,
    pub eval: EvalSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: ModelPreset,
    /// Replaces the masked duration predictor with the context-free baseline.
    pub masked_duration: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: ModelPreset::Desk,
            masked_duration: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub mask_rate: f64,
    pub stutter_enabled: bool,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub weights: LossWeights,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 2e-3,
            warmup_steps: 100,
            mask_rate: 0.8,
            stutter_enabled: true,
            checkpoint_every: 500,
            log_every: 50,
            weights: LossWeights::default(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mask_rate: self.mask_rate,
            batch_size: self.batch_size,
            max_steps: self.steps,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                warmup_steps: self.warmup_steps,
                ..AdamConfig::default()
            },
            seed,
            stutter_enabled: self.stutter_enabled,
            weights: self.weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub threshold: f64,
    pub griffin_lim_iters: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// External PESQ tool, run as `<command> <ref.wav> <deg.wav>`; the last
    /// number it prints is taken as the score.
    pub pesq_command: Option<String>,
}

impl CliConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| validation(format!("{}: {e}", origin.display())))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Reads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::read(path),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.synth.validate()?;
        self.train.to_train_config(self.seed).validate()?;
        if !self.infer.threshold.is_finite() || self.infer.threshold < 0.0 {
            return Err(validation(format!("threshold {} must be a non-negative number", self.infer.threshold)));
        }
        if self.infer.griffin_lim_iters == 0 {
            return Err(validation("griffin_lim_iters must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let text = "seed = 3\n[train]\nsteps = 10\n[audio]\nn_mels = 40\n[train.weights]\nw_dur = 0.5\n";
        let c = CliConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.audio.n_mels, 40);
        assert_eq!(c.audio.hop_size, 256);
        assert_eq!(c.train.weights.w_dur, 0.5);
        assert_eq!(c.train.weights.w_mae, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::from_toml("[train]\nstep = 1\n", Path::new("x.toml")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = CliConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(CliConfig::from_toml(&text, Path::new("x.toml")).unwrap(), c);
    }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fluentedit::synthdata::{generate_corpus, SynthConfig};
use fluentedit_core::{AudioConfig, ModelConfig, Vocabulary};

/// Small model over the default audio and vocabulary, fast enough for
/// per-test training runs.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        phoneme_embed_dim: 16,
        enc_hidden: 16,
        enc_filter: 24,
        cond_dim: 16,
        acoustic_filter: 24,
        predictor_filter: 16,
        variance_embed_dim: 8,
        pitch_bins: 32,
        diffusion_embed_dim: 16,
        residual_layers: 2,
        residual_channels: 16,
        denoiser_filter: 32,
        diffusion_steps: 4,
        ..ModelConfig::desk(Vocabulary::default().len(), 4)
    }
}

pub fn corpus(dir: &Path, n: usize, stutter_rate: f64, seed: u64) -> PathBuf {
    let cfg = SynthConfig { n_utterances: n, stutter_rate, seed, ..SynthConfig::default() };
    generate_corpus(&cfg, &AudioConfig::default(), dir).unwrap()
}

#![allow(dead_code)]

use fluentedit_core::graph::ParamGrads;
use fluentedit_core::nets::{FluentSpeech, ModelConfig};
use fluentedit_core::{ParamId, ParamStore, Tensor};

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        phoneme_embed_dim: 8,
        enc_layers: 2,
        enc_hidden: 8,
        enc_conv_kernel: 3,
        enc_filter: 12,
        enc_heads: 2,
        rel_window: 2,
        enc_dropout: 0.0,
        cond_dim: 8,
        acoustic_layers: 1,
        acoustic_filter: 12,
        predictor_layers: 2,
        stutter_layers: 4,
        predictor_kernel: 3,
        predictor_filter: 8,
        predictor_dropout: 0.0,
        variance_embed_dim: 4,
        masked_duration: true,
        pitch_bins: 16,
        pitch_fmin: 60.0,
        pitch_fmax: 500.0,
        diffusion_embed_dim: 8,
        residual_layers: 1,
        residual_channels: 8,
        denoiser_kernel: 3,
        denoiser_filter: 16,
        dilation: 1,
        diffusion_steps: 4,
        n_speakers: 3,
        vocab_size: 40,
        n_mels: 16,
    }
}

pub fn toy_model(seed: u64) -> FluentSpeech {
    FluentSpeech::new(toy_config(), seed).unwrap()
}

pub fn wave(rows: usize, cols: usize, phase: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|i| ((i as f64 + phase) * 0.731).sin()).collect(),
    )
    .unwrap()
}

/// Compares analytic parameter gradients with central differences on up to
/// `max_entries` entries of parameter `id`. Returns the worst relative error.
pub fn fd_param_check(
    params: &ParamStore,
    id: ParamId,
    max_entries: usize,
    f: impl Fn(&ParamStore) -> (f64, ParamGrads),
) -> f64 {
    let (_, grads) = f(params);
    let analytic = grads.get(id).cloned().unwrap_or_else(|| {
        let t = params.get(id);
        Tensor::zeros(t.rows(), t.cols())
    });
    let n = params.get(id).len();
    let stride = (n / max_entries).max(1);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in (0..n).step_by(stride) {
        let mut plus = params.clone();
        plus.get_mut(id).data_mut()[i] += h;
        let mut minus = params.clone();
        minus.get_mut(id).data_mut()[i] -= h;
        let num = (f(&plus).0 - f(&minus).0) / (2.0 * h);
        let ana = analytic.data()[i];
        let scale = num.abs().max(ana.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((num - ana).abs() / scale);
    }
    worst
}

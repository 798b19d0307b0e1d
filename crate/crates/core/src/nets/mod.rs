//! Trainable networks: linguistic and acoustic encoders, the masked duration
//! and pitch predictors, the stutter predictor, condition fusion and the
//! WaveNet-style spectrogram denoiser.

mod condition;
mod denoiser;
mod encoder;
pub mod layers;
mod predictors;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::{derived_rng, tags};
use crate::tensor::Tensor;
use crate::textgrid::frame_owners;

pub use condition::{pitch_bin, ConditionBundle, PITCH_UNVOICED_BIN};
pub use denoiser::{step_embedding, Denoiser};
pub use encoder::{AcousticEncoder, LinguisticEncoder};
pub use layers::Linear;
pub use predictors::{DurationPredictor, PitchPredictor, StutterPredictor};

/// Parameter-name prefixes of the three blocks reported by
/// [`count_parameters`].
pub const TEXT_ENCODER_PREFIX: &str = "text_encoder.";
pub const CONDITION_PREFIX: &str = "condition.";
pub const DENOISER_PREFIX: &str = "denoiser.";

/// Offset subtracted from `ln(1 + f0)` before it is embedded.
pub const LOG_PITCH_CENTER: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub phoneme_embed_dim: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub enc_conv_kernel: usize,
    pub enc_filter: usize,
    pub enc_heads: usize,
    pub rel_window: usize,
    pub enc_dropout: f64,
    pub cond_dim: usize,
    pub acoustic_layers: usize,
    pub acoustic_filter: usize,
    pub predictor_layers: usize,
    pub stutter_layers: usize,
    pub predictor_kernel: usize,
    pub predictor_filter: usize,
    pub predictor_dropout: f64,
    pub variance_embed_dim: usize,
    /// When false the duration predictor sees text only (context-free baseline).
    pub masked_duration: bool,
    pub pitch_bins: usize,
    pub pitch_fmin: f64,
    pub pitch_fmax: f64,
    pub diffusion_embed_dim: usize,
    pub residual_layers: usize,
    pub residual_channels: usize,
    pub denoiser_kernel: usize,
    pub denoiser_filter: usize,
    pub dilation: usize,
    pub diffusion_steps: usize,
    pub n_speakers: usize,
    pub vocab_size: usize,
    pub n_mels: usize,
}

impl ModelConfig {
    /// Full-size configuration (about 24M parameters).
    pub fn paper(vocab_size: usize, n_speakers: usize) -> Self {
        Self {
            phoneme_embed_dim: 192,
            enc_layers: 4,
            enc_hidden: 192,
            enc_conv_kernel: 5,
            enc_filter: 384,
            enc_heads: 2,
            rel_window: 4,
            enc_dropout: 0.1,
            cond_dim: 256,
            acoustic_layers: 2,
            acoustic_filter: 384,
            predictor_layers: 5,
            stutter_layers: 4,
            predictor_kernel: 3,
            predictor_filter: 256,
            predictor_dropout: 0.4,
            variance_embed_dim: 64,
            masked_duration: true,
            pitch_bins: 256,
            pitch_fmin: 60.0,
            pitch_fmax: 500.0,
            diffusion_embed_dim: 256,
            residual_layers: 20,
            residual_channels: 256,
            denoiser_kernel: 3,
            denoiser_filter: 512,
            dilation: 1,
            diffusion_steps: 8,
            n_speakers,
            vocab_size,
            n_mels: 80,
        }
    }

    /// Small configuration that trains on a single CPU core in minutes.
    pub fn desk(vocab_size: usize, n_speakers: usize) -> Self {
        Self {
            phoneme_embed_dim: 64,
            enc_layers: 2,
            enc_hidden: 64,
            enc_conv_kernel: 3,
            enc_filter: 128,
            enc_heads: 2,
            rel_window: 4,
            enc_dropout: 0.0,
            cond_dim: 64,
            acoustic_layers: 1,
            acoustic_filter: 128,
            predictor_layers: 2,
            stutter_layers: 4,
            predictor_kernel: 3,
            predictor_filter: 64,
            predictor_dropout: 0.1,
            variance_embed_dim: 16,
            masked_duration: true,
            pitch_bins: 256,
            pitch_fmin: 60.0,
            pitch_fmax: 500.0,
            diffusion_embed_dim: 64,
            residual_layers: 4,
            residual_channels: 64,
            denoiser_kernel: 3,
            denoiser_filter: 128,
            dilation: 1,
            diffusion_steps: 8,
            n_speakers,
            vocab_size,
            n_mels: 80,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phoneme_embed_dim", self.phoneme_embed_dim),
            ("enc_layers", self.enc_layers),
            ("enc_hidden", self.enc_hidden),
            ("enc_conv_kernel", self.enc_conv_kernel),
            ("enc_filter", self.enc_filter),
            ("enc_heads", self.enc_heads),
            ("cond_dim", self.cond_dim),
            ("acoustic_layers", self.acoustic_layers),
            ("acoustic_filter", self.acoustic_filter),
            ("predictor_layers", self.predictor_layers),
            ("stutter_layers", self.stutter_layers),
            ("predictor_kernel", self.predictor_kernel),
            ("predictor_filter", self.predictor_filter),
            ("variance_embed_dim", self.variance_embed_dim),
            ("pitch_bins", self.pitch_bins),
            ("diffusion_embed_dim", self.diffusion_embed_dim),
            ("residual_layers", self.residual_layers),
            ("residual_channels", self.residual_channels),
            ("denoiser_kernel", self.denoiser_kernel),
            ("denoiser_filter", self.denoiser_filter),
            ("diffusion_steps", self.diffusion_steps),
            ("n_speakers", self.n_speakers),
            ("vocab_size", self.vocab_size),
            ("n_mels", self.n_mels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid("model config", format!("`{name}` must be positive")));
            }
        }
        if self.phoneme_embed_dim != self.enc_hidden {
            return Err(invalid("model config", "phoneme_embed_dim must equal enc_hidden"));
        }
        if !self.enc_hidden.is_multiple_of(self.enc_heads) || !self.cond_dim.is_multiple_of(self.enc_heads) {
            return Err(invalid("model config", "enc_hidden and cond_dim must be divisible by enc_heads"));
        }
        if self.denoiser_filter != 2 * self.residual_channels {
            return Err(invalid("model config", "denoiser_filter must be twice residual_channels"));
        }
        if self.dilation != 1 {
            return Err(invalid("model config", "dilation must be 1"));
        }
        if !self.diffusion_embed_dim.is_multiple_of(2) || self.diffusion_embed_dim < 4 {
            return Err(invalid("model config", "diffusion_embed_dim must be even and at least 4"));
        }
        if !(0.0..1.0).contains(&self.predictor_dropout) || !(0.0..1.0).contains(&self.enc_dropout) {
            return Err(invalid("model config", "dropout must lie in [0, 1)"));
        }
        if !(self.pitch_fmin > 0.0 && self.pitch_fmax > self.pitch_fmin) {
            return Err(invalid("model config", "pitch range must satisfy 0 < fmin < fmax"));
        }
        Ok(())
    }
}

/// Every trainable component plus the parameter store they index into.
#[derive(Debug, Clone)]
pub struct FluentSpeech {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: LinguisticEncoder,
    pub text_proj: Linear,
    pub acoustic: AcousticEncoder,
    pub duration: DurationPredictor,
    pub pitch: PitchPredictor,
    pub stutter: StutterPredictor,
    pub condition: ConditionBundle,
    pub denoiser: Denoiser,
}

impl FluentSpeech {
    /// Builds a freshly initialized model; the same `(config, seed)` always
    /// gives the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(seed, tags::INIT, 0);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = LinguisticEncoder::new(&mut store, "text_encoder", c, &mut rng);
        let text_proj = Linear::new(&mut store, "condition.text_proj", c.enc_hidden, c.cond_dim, &mut rng);
        let acoustic = AcousticEncoder::new(&mut store, "condition.acoustic_encoder", c, &mut rng);
        let duration = DurationPredictor::new(&mut store, "condition.duration_predictor", c, &mut rng);
        let pitch = PitchPredictor::new(&mut store, "condition.pitch_predictor", c, &mut rng);
        let stutter = StutterPredictor::new(&mut store, "condition.stutter_predictor", c, &mut rng);
        let condition = ConditionBundle::new(&mut store, "condition", c, &mut rng);
        let denoiser = Denoiser::new(&mut store, "denoiser", c, &mut rng);
        Ok(Self {
            config,
            params: store,
            encoder,
            text_proj,
            acoustic,
            duration,
            pitch,
            stutter,
            condition,
            denoiser,
        })
    }

    pub fn check_phonemes(&self, ids: &[usize]) -> Result<()> {
        crate::textgrid::PhonemeSequence::new(ids.to_vec()).validate(self.config.vocab_size)
    }

    /// Phoneme-level text embedding `e_p`.
    pub fn linguistic_encode(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        self.check_phonemes(ids)?;
        Ok(self.encoder.forward(g, ids))
    }

    /// Frame-level text embedding `e_t`: projection to the condition width
    /// followed by length regulation.
    pub fn text_frames(&self, g: &mut Graph<'_>, e_p: Var, durations: &[usize]) -> Result<Var> {
        if durations.len() != g.shape(e_p).0 {
            return Err(crate::error::shape_err(
                "text_frames",
                format!("{} durations", g.shape(e_p).0),
                format!("{}", durations.len()),
            ));
        }
        let proj = self.text_proj.forward(g, e_p);
        Ok(g.gather_rows(proj, frame_owners(durations)))
    }

    /// Mel input with masked frames replaced by the learned mask vector.
    pub fn masked_mel(&self, g: &mut Graph<'_>, mel: &Tensor, frame_mask: &[bool]) -> Result<Var> {
        if mel.cols() != self.config.n_mels || frame_mask.len() != mel.rows() {
            return Err(crate::error::shape_err(
                "masked_mel",
                format!("{} x {} mel with matching mask", frame_mask.len(), self.config.n_mels),
                format!("{:?}", mel.shape()),
            ));
        }
        let x = g.constant(mel.clone());
        let fill = g.param(self.condition.mask_vector);
        Ok(g.select_rows(x, fill, frame_mask.to_vec()))
    }
}

/// Block subtotals of the trainable parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub text_encoder: usize,
    pub condition: usize,
    pub denoiser: usize,
}

pub fn count_parameters(params: &ParamStore) -> ParameterCount {
    ParameterCount {
        total: params.count_scalars(),
        text_encoder: params.count_with_prefix(TEXT_ENCODER_PREFIX),
        condition: params.count_with_prefix(CONDITION_PREFIX),
        denoiser: params.count_with_prefix(DENOISER_PREFIX),
    }
}

/// `ln(1 + d)` for each duration.
pub fn log_durations(durations: &[usize]) -> Vec<f64> {
    durations.iter().map(|&d| libm::log1p(d as f64)).collect()
}

/// Inverse of [`log_durations`], rounded and floored at one frame.
pub fn durations_from_log(log_d: &[f64]) -> Vec<usize> {
    log_d
        .iter()
        .map(|&v| {
            let d = libm::round(libm::expm1(v));
            if d.is_finite() && d >= 1.0 { d as usize } else { 1 }
        })
        .collect()
}

/// `ln(1 + f0)`, zero for unvoiced frames.
pub fn log_pitch(f0: &[f64]) -> Vec<f64> {
    f0.iter().map(|&f| if f > 0.0 { libm::log1p(f) } else { 0.0 }).collect()
}

/// Inverse of [`log_pitch`]; predictions below `min_hz` are unvoiced.
pub fn pitch_from_log(log_f0: &[f64], min_hz: f64) -> Vec<f64> {
    log_f0
        .iter()
        .map(|&v| {
            let f = libm::expm1(v);
            if f.is_finite() && f >= min_hz { f } else { 0.0 }
        })
        .collect()
}

//! One optimization step: masking, conditioning, diffusion-step sampling,
//! loss evaluation restricted to the mask and an Adam update.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::{gaussian, DiffusionSchedule};
use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, ParamGrads, Var};
use crate::losses::{mae_node, ssim_node, stutter_nodes, total_loss, variance_node, LossParts, LossWeights};
use crate::nets::{log_durations, log_pitch, FluentSpeech};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, derived_rng, tags};
use crate::tensor::Tensor;
use crate::textgrid::{sample_mask_spans, Alignment, MaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub stutter_enabled: bool,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.8,
            batch_size: 8,
            max_steps: 20_000,
            adam: AdamConfig::default(),
            seed: 0,
            stutter_enabled: false,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(invalid("mask_rate", format!("{} outside [0, 1]", self.mask_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        self.adam.validate()?;
        self.weights.validate()
    }
}

/// One utterance ready for training: normalized mel, phoneme ids with their
/// alignment, frame-level F0 in Hz and optional frame stutter labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: alloc::string::String,
    pub phonemes: Vec<usize>,
    pub alignment: Alignment,
    pub mel: Tensor,
    pub f0: Vec<f64>,
    pub speaker: usize,
    pub stutter: Option<Vec<u8>>,
}

impl TrainingExample {
    pub fn validate(&self, n_mels: usize) -> Result<()> {
        let n = self.mel.rows();
        if self.mel.cols() != n_mels {
            return Err(shape_err("training example", format!("{n_mels} mel bins"), format!("{}", self.mel.cols())));
        }
        if self.alignment.n_phonemes() != self.phonemes.len() || self.alignment.n_frames() != n {
            return Err(invalid(
                "alignment",
                format!("utterance `{}`: alignment does not cover its phonemes and frames", self.id),
            ));
        }
        if self.f0.len() != n || self.stutter.as_ref().is_some_and(|s| s.len() != n) {
            return Err(invalid("frame features", format!("utterance `{}`: length mismatch", self.id)));
        }
        Ok(())
    }

    /// Loss targets taken from the example itself.
    pub fn targets(&self) -> Targets {
        Targets {
            mel: self.mel.clone(),
            log_durations: log_durations(&self.alignment.durations()),
            log_pitch: log_pitch(&self.f0),
            stutter: self.stutter.clone(),
        }
    }
}

/// Values the losses compare against. Kept apart from the model inputs so
/// that mask restriction can be checked by perturbing targets alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub mel: Tensor,
    pub log_durations: Vec<f64>,
    pub log_pitch: Vec<f64>,
    pub stutter: Option<Vec<u8>>,
}

/// Random choices made for one utterance in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub mask: MaskSpec,
    pub phoneme_mask: Vec<bool>,
    pub frame_mask: Vec<bool>,
    pub t: usize,
    pub noise_seed: u64,
    pub dropout_seed: u64,
}

impl StepPlan {
    /// Draws mask, diffusion step and seeds from `(seed, step, slot)`.
    pub fn draw(ex: &TrainingExample, mask_rate: f64, steps: usize, seed: u64, step: u64, slot: usize) -> Result<Self> {
        let idx = step.wrapping_mul(1 << 16).wrapping_add(slot as u64);
        let mask = sample_mask_spans(&ex.alignment, mask_rate, derive_seed(seed, tags::MASK, idx))?;
        let mut rng = derived_rng(seed, tags::DIFFUSION_STEP, idx);
        let t = rng.random_range(1..=steps);
        Ok(Self::with_mask(ex, mask, t, derive_seed(seed, tags::NOISE, idx), derive_seed(seed, tags::DROPOUT, idx)))
    }

    pub fn with_mask(ex: &TrainingExample, mask: MaskSpec, t: usize, noise_seed: u64, dropout_seed: u64) -> Self {
        let phoneme_mask = (0..ex.phonemes.len()).map(|p| mask.masked_phonemes().contains(&p)).collect();
        let frame_mask = mask.frame_flags(ex.mel.rows());
        Self {
            mask,
            phoneme_mask,
            frame_mask,
            t,
            noise_seed,
            dropout_seed,
        }
    }
}

/// Which parts of the model a step trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveParts {
    pub reconstruction: bool,
    pub duration: bool,
    pub pitch: bool,
    pub stutter: bool,
}

impl ActiveParts {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        let w = &cfg.weights;
        Self {
            reconstruction: w.w_mae > 0.0 || w.w_ssim > 0.0,
            duration: w.w_dur > 0.0,
            pitch: w.w_pitch > 0.0,
            stutter: cfg.stutter_enabled && (w.w_bce > 0.0 || w.w_focal > 0.0),
        }
    }
}

/// Builds the loss graph of one utterance and returns the weighted total
/// node together with the individual loss values.
#[allow(clippy::too_many_arguments)]
pub fn utterance_loss(
    model: &FluentSpeech,
    g: &mut Graph<'_>,
    ex: &TrainingExample,
    targets: &Targets,
    plan: &StepPlan,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    active: ActiveParts,
) -> Result<(Var, LossParts)> {
    let w = &cfg.weights;
    let durations = ex.alignment.durations();
    let e_p = model.linguistic_encode(g, &ex.phonemes)?;
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut parts = LossParts::default();

    if active.duration {
        let known = log_durations(&durations);
        let pred = model.duration.forward(g, e_p, &known, &plan.phoneme_mask)?;
        let node = variance_node(g, pred, &targets.log_durations, &plan.phoneme_mask)?;
        parts.duration = g.scalar(node);
        terms.push((node, w.w_dur));
    }
    if !(active.reconstruction || active.pitch || active.stutter) {
        return finish(g, terms, parts, cfg);
    }

    let e_t = model.text_frames(g, e_p, &durations)?;
    if active.pitch {
        let known = log_pitch(&ex.f0);
        let pred = model.pitch.forward(g, e_t, &known, &plan.frame_mask)?;
        let node = variance_node(g, pred, &targets.log_pitch, &plan.frame_mask)?;
        parts.pitch = g.scalar(node);
        terms.push((node, w.w_pitch));
    }
    let labels: Option<Vec<u8>> = cfg
        .stutter_enabled
        .then(|| ex.stutter.clone().unwrap_or_else(|| alloc::vec![0; ex.mel.rows()]));
    if active.stutter {
        if let Some(target_labels) = targets.stutter.as_ref() {
            let full = g.constant(ex.mel.clone());
            let e_x = model.acoustic.forward(g, full);
            let probs = model.stutter.forward(g, e_t, e_x)?;
            let (bce, focal) = stutter_nodes(g, probs, target_labels, w)?;
            parts.bce = g.scalar(bce);
            parts.focal = g.scalar(focal);
            terms.push((bce, w.w_bce));
            terms.push((focal, w.w_focal));
        }
    }
    if active.reconstruction {
        let masked = model.masked_mel(g, &ex.mel, &plan.frame_mask)?;
        let e_x = model.acoustic.forward(g, masked);
        let c = model.condition.build(g, e_t, e_x, ex.speaker, &ex.f0, labels.as_deref())?;
        let mut rng = crate::rng::rng_from_seed(plan.noise_seed);
        let noise = gaussian(ex.mel.rows(), ex.mel.cols(), &mut rng);
        let x_t = sched.q_sample(&ex.mel, plan.t, &noise)?;
        let x_t = g.constant(x_t);
        let x0_hat = model.denoiser.forward(g, x_t, plan.t, c)?;
        let mae = mae_node(g, x0_hat, &targets.mel, &plan.mask)?;
        parts.mae = g.scalar(mae);
        terms.push((mae, w.w_mae));
        if w.w_ssim > 0.0 {
            let ssim = ssim_node(g, x0_hat, &targets.mel, &plan.mask)?;
            parts.ssim = g.scalar(ssim);
            terms.push((ssim, w.w_ssim));
        }
    }
    finish(g, terms, parts, cfg)
}

fn finish(g: &mut Graph<'_>, terms: Vec<(Var, f64)>, parts: LossParts, cfg: &TrainConfig) -> Result<(Var, LossParts)> {
    total_loss(&parts, &cfg.weights, cfg.stutter_enabled)?;
    let mut total: Option<Var> = None;
    for (node, weight) in terms {
        let scaled = g.scale(node, weight);
        total = Some(match total {
            Some(t) => g.add(t, scaled),
            None => scaled,
        });
    }
    let total = total.unwrap_or_else(|| g.constant(Tensor::zeros(1, 1)));
    Ok((total, parts))
}

/// Example indices of the batch used at `step`: consecutive slices of
/// per-epoch permutations, each a pure function of `(seed, epoch)`.
pub fn batch_indices(n_examples: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for i in 0..batch_size as u64 {
        let pos = step * batch_size as u64 + i;
        let epoch = pos / n_examples as u64;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            cached = Some((epoch, epoch_order(n_examples, seed, epoch)));
        }
        let order = &cached.as_ref().expect("filled above").1;
        out.push(order[(pos % n_examples as u64) as usize]);
    }
    out
}

pub fn epoch_order(n_examples: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut derived_rng(seed, tags::DATA_ORDER, epoch));
    order
}

/// Outcome of one [`train_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub parts: LossParts,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// Runs forward/backward over `batch` and applies one Adam update. The step
/// number is taken from the optimizer state, so resuming continues the same
/// random streams.
pub fn train_step(
    model: &mut FluentSpeech,
    opt: &mut AdamState,
    batch: &[&TrainingExample],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(invalid("batch", "empty batch"));
    }
    let step = opt.step;
    let active = ActiveParts::from_config(cfg);
    let mut grads = ParamGrads::new(model.params.len());
    let mut parts = LossParts::default();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (slot, ex) in batch.iter().enumerate() {
        ex.validate(model.config.n_mels)?;
        let plan = StepPlan::draw(ex, cfg.mask_rate, sched.steps(), cfg.seed, step, slot)?;
        let targets = ex.targets();
        let mut g = Graph::training(&model.params, plan.dropout_seed);
        let (total, p) = utterance_loss(model, &mut g, ex, &targets, &plan, sched, cfg, active)?;
        let value = g.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss of utterance `{}` at step {step}: {p:?}", ex.id)));
        }
        g.backward(total).accumulate_params(&g, scale, &mut grads);
        parts.add_scaled(&p, scale);
        loss += scale * value;
    }
    let grad_norm = opt.update(&mut model.params, &grads, &cfg.adam)?;
    Ok(StepReport {
        step: opt.step,
        loss,
        parts,
        grad_norm,
        learning_rate: cfg.adam.lr_at(opt.step),
    })
}

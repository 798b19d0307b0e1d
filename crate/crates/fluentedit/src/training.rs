//! Corpus loading and the training loop with periodic checkpoints, metric
//! logs and exact resume.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fluentedit_core::graph::Graph;
use fluentedit_core::losses::LossParts;
use fluentedit_core::optim::AdamState;
use fluentedit_core::train::{
    batch_indices, train_step, utterance_loss, ActiveParts, StepPlan, StepReport, TrainConfig, TrainingExample,
};
use fluentedit_core::{make_schedule, AudioConfig, FluentSpeech, MelNormalizer, ModelConfig, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION};
use crate::error::{validation, AppError, Result};
use crate::io::{load_utterance, Manifest, Utterance};

/// Reads and featurizes every utterance of a manifest.
pub fn load_corpus(manifest: &Manifest, vocab: &Vocabulary, audio: &AudioConfig) -> Result<Vec<Utterance>> {
    manifest.entries.iter().map(|e| load_utterance(manifest, e, vocab, audio)).collect()
}

pub fn to_example(u: &Utterance, normalizer: &MelNormalizer) -> TrainingExample {
    TrainingExample {
        id: u.id.clone(),
        phonemes: u.phonemes.clone(),
        alignment: u.alignment.clone(),
        mel: normalizer.normalize(&u.mel),
        f0: u.f0.clone(),
        speaker: u.speaker,
        stutter: u.stutter.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Desk,
    Paper,
}

impl ModelPreset {
    pub fn build(self, vocab_size: usize, n_speakers: usize) -> ModelConfig {
        match self {
            ModelPreset::Desk => ModelConfig::desk(vocab_size, n_speakers),
            ModelPreset::Paper => ModelConfig::paper(vocab_size, n_speakers),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub audio: AudioConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub reports: Vec<StepReport>,
    pub model: FluentSpeech,
    pub normalizer: MelNormalizer,
}

/// Trains on the manifest's utterances until `train.max_steps`, writing
/// `latest.ckpt`, periodic `step_NNNNNN.ckpt` files and `train_log.jsonl`
/// under `out_dir`.
pub fn run_training(manifest_path: impl AsRef<Path>, opts: &TrainOptions, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let manifest = Manifest::read(manifest_path)?;
    opts.train.validate()?;
    opts.audio.validate()?;
    let vocab = Vocabulary::default();
    let utterances = load_corpus(&manifest, &vocab, &opts.audio)?;
    run_training_on(&utterances, opts, out_dir)
}

/// [`run_training`] over utterances already in memory.
pub fn run_training_on(utterances: &[Utterance], opts: &TrainOptions, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| AppError::io(out, e))?;
    if utterances.is_empty() {
        return Err(validation("no utterances to train on"));
    }
    let vocab = Vocabulary::default();
    let (mut model, mut opt, normalizer, train) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let opt = ck
                .optimizer
                .ok_or_else(|| validation(format!("{} carries no optimizer state to resume", path.display())))?;
            let mut train = ck.meta.train.clone();
            train.max_steps = opts.train.max_steps;
            (ck.model, opt, ck.meta.normalizer, train)
        }
        None => {
            let normalizer = MelNormalizer::fit(utterances.iter().map(|u| &u.mel))?;
            let model = FluentSpeech::new(opts.model.clone(), opts.init_seed)?;
            let opt = AdamState::new(&model.params);
            (model, opt, normalizer, opts.train.clone())
        }
    };
    let max_speaker = utterances.iter().map(|u| u.speaker).max().unwrap_or(0);
    if max_speaker >= model.config.n_speakers {
        return Err(validation(format!(
            "speaker {max_speaker} exceeds the model's {} speakers",
            model.config.n_speakers
        )));
    }
    let examples: Vec<TrainingExample> = utterances.iter().map(|u| to_example(u, &normalizer)).collect();
    let sched = make_schedule(model.config.diffusion_steps)?;
    log::info!(
        "training {} utterances from step {} to {} (batch {}, seed {})",
        examples.len(),
        opt.step,
        train.max_steps,
        train.batch_size,
        train.seed
    );
    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(opt.step > 0)
        .write(true)
        .truncate(opt.step == 0)
        .open(&log_path)
        .map_err(|e| AppError::io(&log_path, e))?;
    let meta = |step: u64| CheckpointMeta {
        format_version: FORMAT_VERSION,
        step,
        model: model.config.clone(),
        audio: opts.audio.clone(),
        normalizer: normalizer.clone(),
        vocabulary: vocab.clone(),
        train: train.clone(),
        has_optimizer: true,
    };
    let meta_template = meta(0);
    let mut reports = Vec::new();
    while opt.step < train.max_steps {
        let idx = batch_indices(examples.len(), train.batch_size, train.seed, opt.step);
        let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
        let report = train_step(&mut model, &mut opt, &batch, &sched, &train)?;
        if opts.log_every > 0 && (report.step % opts.log_every == 0 || report.step == train.max_steps) {
            let line = serde_json::to_string(&report).map_err(|e| AppError::format(&log_path, e))?;
            writeln!(log_file, "{line}").map_err(|e| AppError::io(&log_path, e))?;
            log::info!(
                "step {} loss {:.4} mae {:.4} ssim {:.4} dur {:.4} pitch {:.4} bce {:.4} focal {:.4}",
                report.step,
                report.loss,
                report.parts.mae,
                report.parts.ssim,
                report.parts.duration,
                report.parts.pitch,
                report.parts.bce,
                report.parts.focal
            );
        }
        reports.push(report);
        if opts.checkpoint_every > 0 && opt.step % opts.checkpoint_every == 0 && opt.step < train.max_steps {
            let ck = Checkpoint {
                meta: CheckpointMeta { step: opt.step, ..meta_template.clone() },
                model: model.clone(),
                optimizer: Some(opt.clone()),
            };
            ck.save(out.join(format!("step_{:06}.ckpt", opt.step)))?;
        }
    }
    let path = out.join("latest.ckpt");
    let ck = Checkpoint {
        meta: CheckpointMeta { step: opt.step, ..meta_template },
        model,
        optimizer: Some(opt),
    };
    ck.save(&path)?;
    Ok(TrainOutcome {
        checkpoint: path,
        reports,
        model: ck.model,
        normalizer,
    })
}

/// Mean loss parts of the model over `examples`, one freshly drawn mask and
/// diffusion step per utterance, with dropout off.
pub fn evaluate_losses(
    model: &FluentSpeech,
    examples: &[TrainingExample],
    train: &TrainConfig,
    seed: u64,
) -> Result<LossParts> {
    let sched = make_schedule(model.config.diffusion_steps)?;
    let active = ActiveParts::from_config(train);
    let mut total = LossParts::default();
    let scale = 1.0 / examples.len().max(1) as f64;
    for (i, ex) in examples.iter().enumerate() {
        let plan = StepPlan::draw(ex, train.mask_rate, sched.steps(), seed, u64::MAX >> 20, i)?;
        let mut g = Graph::new(&model.params);
        let (_, parts) = utterance_loss(model, &mut g, ex, &ex.targets(), &plan, &sched, train, active)?;
        total.add_scaled(&parts, scale);
    }
    Ok(total)
}

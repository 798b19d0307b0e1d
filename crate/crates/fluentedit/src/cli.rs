//! Command-line front end: argument parsing, config resolution and the six
//! subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use fluentedit_core::Vocabulary;
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::{validation, AppError, Result};
use crate::io::{frame_spans_to_stutter, read_npy, write_json, write_npy, write_wav, StutterType, Utterance};
use crate::pipeline::{compare, evaluate_model, load_inputs, Engine, EvalReport};
use crate::plot::save_mel_png;
use crate::synthdata::generate_corpus;
use crate::training::{run_training, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "fluentedit", version, about = "Text-based speech editing and stutter removal with a diffusion model")]
pub struct Cli {
    /// TOML config file; defaults to $FLUENTEDIT_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate the synthetic tone corpus.
    SynthData(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Replace a phoneme span of one utterance.
    Edit(EditArgs),
    /// Detect and remove stutters from one utterance.
    RemoveStutter(RemoveArgs),
    /// Score a model on a manifest, or compare predictions with references.
    Eval(EvalArgs),
    /// Render a mel-spectrogram with outlined frame regions to PNG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub stutter_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// One utterance picked from a manifest or a WAV file.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Manifest (JSON lines) or a single WAV file.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Utterance id; optional when the input holds one utterance.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Original phoneme span `start:end` to replace (end exclusive).
    #[arg(long)]
    pub region: Region,
    /// Replacement phoneme symbols separated by spaces.
    #[arg(long, default_value = "")]
    pub text: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RemoveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score on `--manifest`.
    #[arg(long, requires = "manifest", conflicts_with_all = ["pred", "reference"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Predicted audio: a manifest or a WAV file.
    #[arg(long, requires = "reference")]
    pub pred: Option<PathBuf>,
    /// Reference audio: a manifest or a WAV file.
    #[arg(long = "ref", requires = "pred")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score only the first N utterances.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// A mel `.npy`, a WAV file or a manifest.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub id: Option<String>,
    /// Frame span `start:end` to outline; repeatable.
    #[arg(long)]
    pub region: Vec<Region>,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Half-open index span written `start:end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region(pub usize, pub usize);

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got `{s}`"))?;
        let a: usize = a.trim().parse().map_err(|e| format!("bad start `{a}`: {e}"))?;
        let b: usize = b.trim().parse().map_err(|e| format!("bad end `{b}`: {e}"))?;
        if a > b {
            return Err(format!("start {a} exceeds end {b}"));
        }
        Ok(Region(a, b))
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = CliConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    match &cli.command {
        Cmd::SynthData(a) => {
            if let Some(n) = a.utterances {
                cfg.synth.n_utterances = n;
            }
            if let Some(r) = a.stutter_rate {
                cfg.synth.stutter_rate = r;
            }
        }
        Cmd::Train(a) => {
            if let Some(s) = a.steps {
                cfg.train.steps = s;
            }
        }
        Cmd::RemoveStutter(RemoveArgs { threshold: Some(t), .. }) | Cmd::Eval(EvalArgs { threshold: Some(t), .. }) => {
            cfg.infer.threshold = *t;
        }
        _ => {}
    }
    cfg.validate()?;
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&cfg).map_err(|e| AppError::Runtime(e.to_string()))?
    );
    log::info!("seed {}", cfg.seed);
    match cli.command {
        Cmd::SynthData(a) => synth_data(&cfg, &a),
        Cmd::Train(a) => train(&cfg, &a),
        Cmd::Edit(a) => edit(&cfg, &a),
        Cmd::RemoveStutter(a) => remove_stutter(&cfg, &a),
        Cmd::Eval(a) => eval(&cfg, &a),
        Cmd::Plot(a) => plot(&cfg, &a),
    }
}

fn synth_data(cfg: &CliConfig, a: &SynthArgs) -> Result<()> {
    let manifest = generate_corpus(&cfg.synth, &cfg.audio, &a.out)?;
    log::info!("wrote {} utterances to {}", cfg.synth.n_utterances, manifest.display());
    Ok(())
}

fn train(cfg: &CliConfig, a: &TrainArgs) -> Result<()> {
    let vocab = Vocabulary::default();
    let mut model = cfg.model.preset.build(vocab.len(), cfg.synth.n_speakers);
    model.masked_duration = cfg.model.masked_duration;
    let opts = TrainOptions {
        model,
        train: cfg.train.to_train_config(cfg.seed),
        audio: cfg.audio.clone(),
        init_seed: cfg.seed,
        checkpoint_every: cfg.train.checkpoint_every,
        log_every: cfg.train.log_every,
        resume: a.resume.clone(),
    };
    let out = run_training(&a.manifest, &opts, &a.out)?;
    if let Some(last) = out.reports.last() {
        log::info!("finished at step {} with loss {:.4}", last.step, last.loss);
    }
    log::info!("checkpoint {}", out.checkpoint.display());
    Ok(())
}

fn engine(cfg: &CliConfig, checkpoint: &Path) -> Result<Engine> {
    let engine = Engine::load(checkpoint, cfg.infer.griffin_lim_iters)?;
    if engine.audio != cfg.audio {
        log::warn!("using the checkpoint's audio config; the config file's [audio] is ignored");
    }
    Ok(engine)
}

fn pick(mut utts: Vec<Utterance>, id: Option<&str>) -> Result<Utterance> {
    match id {
        Some(id) => {
            let i = utts
                .iter()
                .position(|u| u.id == id)
                .ok_or_else(|| validation(format!("utterance `{id}` not found")))?;
            Ok(utts.swap_remove(i))
        }
        None if utts.len() == 1 => Ok(utts.remove(0)),
        None => Err(validation(format!("input holds {} utterances; pass --id", utts.len()))),
    }
}

#[derive(Serialize)]
struct EditSummary {
    id: String,
    region: (usize, usize),
    replacement: Vec<String>,
    /// Regenerated frame spans in the original and the output.
    mu_original: Vec<(usize, usize)>,
    mu_target: Vec<(usize, usize)>,
    target_durations: Vec<usize>,
    input_frames: usize,
    output_frames: usize,
    seed: u64,
}

fn edit(cfg: &CliConfig, a: &EditArgs) -> Result<()> {
    let engine = engine(cfg, &a.checkpoint)?;
    let u = pick(load_inputs(&a.input.manifest, &engine.vocabulary, &engine.audio)?, a.input.id.as_deref())?;
    let replacement: Vec<String> = a.text.split_whitespace().map(str::to_string).collect();
    let r = engine.edit(&u, (a.region.0, a.region.1), &replacement, cfg.seed)?;
    write_wav(a.out.join("edited.wav"), &r.wave)?;
    write_npy(a.out.join("edited.npy"), &r.mel)?;
    let summary = EditSummary {
        id: u.id.clone(),
        region: (a.region.0, a.region.1),
        replacement,
        mu_original: r.regen.mu_original.spans().to_vec(),
        mu_target: r.regen.mu_target.spans().to_vec(),
        target_durations: r.regen.target_durations.clone(),
        input_frames: u.mel.rows(),
        output_frames: r.mel.rows(),
        seed: cfg.seed,
    };
    write_json(a.out.join("edit.json"), &summary)?;
    log::info!("edited `{}`: {} -> {} frames", u.id, u.mel.rows(), r.mel.rows());
    Ok(())
}

fn remove_stutter(cfg: &CliConfig, a: &RemoveArgs) -> Result<()> {
    let engine = engine(cfg, &a.checkpoint)?;
    let u = pick(load_inputs(&a.input.manifest, &engine.vocabulary, &engine.audio)?, a.input.id.as_deref())?;
    let (r, removal) = engine.remove_stutter(&u, cfg.infer.threshold, cfg.seed)?;
    write_wav(a.out.join("clean.wav"), &r.wave)?;
    write_npy(a.out.join("clean.npy"), &r.mel)?;
    let spans = frame_spans_to_stutter(removal.detected.spans(), StutterType::Other, &engine.audio);
    write_json(a.out.join("detected.json"), &spans)?;
    log::info!(
        "`{}`: {} stutter spans, {} -> {} frames",
        u.id,
        spans.len(),
        u.mel.rows(),
        r.mel.rows()
    );
    Ok(())
}

fn limited(mut utts: Vec<Utterance>, limit: Option<usize>) -> Vec<Utterance> {
    if let Some(n) = limit {
        utts.truncate(n);
    }
    utts
}

fn eval(cfg: &CliConfig, a: &EvalArgs) -> Result<()> {
    let vocab = Vocabulary::default();
    let mut report = match (&a.checkpoint, &a.manifest, &a.pred, &a.reference) {
        (Some(ck), Some(m), None, None) => {
            let engine = engine(cfg, ck)?;
            let utts = limited(load_inputs(m, &engine.vocabulary, &engine.audio)?, a.limit);
            evaluate_model(&engine, &utts, cfg.infer.threshold, cfg.seed)?
        }
        (None, _, Some(p), Some(r)) => {
            let pred = load_inputs(p, &vocab, &cfg.audio)?;
            let reference = limited(load_inputs(r, &vocab, &cfg.audio)?, a.limit);
            let mut report = compare(&pred, &reference, &cfg.audio)?;
            if let Some(cmd) = &cfg.eval.pesq_command {
                report.aggregate.pesq = Some(external_pesq(cmd, &pred, &reference, &a.out)?);
            }
            report
        }
        _ => return Err(validation("eval needs --checkpoint with --manifest, or --pred with --ref")),
    };
    report.per_utterance.sort_by(|x, y| x.id.cmp(&y.id));
    write_json(&a.out, &report)?;
    log_report(&report);
    Ok(())
}

fn log_report(r: &EvalReport) {
    let g = &r.aggregate;
    log::info!(
        "{} utterances: mcd {:?} dB, stoi {:?}, duration mse {:?}, pitch mse {:?}, stutter {:?}",
        g.utterances,
        g.mcd_db,
        g.stoi,
        g.duration_mse,
        g.pitch_mse,
        g.stutter
    );
}

/// Mean score of an external PESQ tool over paired utterances.
fn external_pesq(cmd: &str, pred: &[Utterance], reference: &[Utterance], report: &Path) -> Result<f64> {
    let dir = report.with_extension("pesq_tmp");
    let mut total = 0.0;
    let mut n = 0usize;
    for r in reference {
        let Some(p) = pred.iter().find(|p| p.id == r.id).or(if pred.len() == 1 { pred.first() } else { None }) else {
            continue;
        };
        let (rp, pp) = (dir.join(format!("{}_ref.wav", r.id)), dir.join(format!("{}_deg.wav", r.id)));
        write_wav(&rp, &r.wave)?;
        write_wav(&pp, &p.wave)?;
        let mut parts = cmd.split_whitespace();
        let prog = parts.next().ok_or_else(|| validation("empty pesq_command"))?;
        let out = Command::new(prog)
            .args(parts)
            .arg(&rp)
            .arg(&pp)
            .output()
            .map_err(|e| AppError::Runtime(format!("running `{cmd}`: {e}")))?;
        if !out.status.success() {
            return Err(AppError::Runtime(format!("`{cmd}` failed with {}", out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let score = text
            .split(|c: char| c.is_whitespace() || c == '=' || c == ':')
            .filter_map(|t| t.parse::<f64>().ok())
            .next_back()
            .ok_or_else(|| AppError::Runtime(format!("`{cmd}` printed no score")))?;
        total += score;
        n += 1;
    }
    let _ = std::fs::remove_dir_all(&dir);
    if n == 0 {
        return Err(validation("no utterance pairs for PESQ"));
    }
    Ok(total / n as f64)
}

fn plot(cfg: &CliConfig, a: &PlotArgs) -> Result<()> {
    let mel = if a.input.extension().is_some_and(|e| e == "npy") {
        read_npy(&a.input)?
    } else {
        pick(load_inputs(&a.input, &Vocabulary::default(), &cfg.audio)?, a.id.as_deref())?.mel
    };
    let spans: Vec<(usize, usize)> = a.region.iter().map(|r| (r.0, r.1)).collect();
    save_mel_png(&a.out, &mel, &spans)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

//! File-level inference and evaluation built on a loaded checkpoint.

use std::collections::BTreeSet;
use std::path::Path;

use fluentedit_core::infer::{self, EditRequest, RegenOutput, SourceUtterance, StutterRemoval};
use fluentedit_core::metrics::{
    duration_error, mcd, mel_cepstrum, pitch_error, stutter_localization_scores, word_durations_ms, LocalizationScores,
    MCD_ORDER,
};
use fluentedit_core::rng::{derived_rng, tags};
use fluentedit_core::textgrid::Vocabulary;
use fluentedit_core::{make_schedule, AudioConfig, DiffusionSchedule, FluentSpeech, MelNormalizer, Tensor};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dsp::{extract_pitch, mel_spectrogram, Waveform};
use crate::error::{validation, Result};
use crate::io::{encode_phonemes, Manifest, Utterance};
use crate::stoi::stoi;
use crate::vocoder::Vocoder;

/// A checkpoint made ready for inference.
pub struct Engine {
    pub model: FluentSpeech,
    pub sched: DiffusionSchedule,
    pub normalizer: MelNormalizer,
    pub audio: AudioConfig,
    pub vocabulary: Vocabulary,
    /// Whether the model was trained with the stutter embedding.
    pub stutter_condition: bool,
    pub vocoder: Vocoder,
    pub griffin_lim_iters: usize,
}

impl Engine {
    pub fn load(path: impl AsRef<Path>, griffin_lim_iters: usize) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        Self::from_parts(ck.model, ck.meta.normalizer, ck.meta.audio, ck.meta.vocabulary, ck.meta.train.stutter_enabled, griffin_lim_iters)
    }

    pub fn from_parts(
        model: FluentSpeech,
        normalizer: MelNormalizer,
        audio: AudioConfig,
        vocabulary: Vocabulary,
        stutter_condition: bool,
        griffin_lim_iters: usize,
    ) -> Result<Self> {
        Ok(Self {
            sched: make_schedule(model.config.diffusion_steps)?,
            vocoder: Vocoder::new(&audio)?,
            model,
            normalizer,
            audio,
            vocabulary,
            stutter_condition,
            griffin_lim_iters,
        })
    }

    fn source<'a>(&self, u: &'a Utterance, normalized: &'a Tensor) -> SourceUtterance<'a> {
        SourceUtterance {
            phonemes: &u.phonemes,
            alignment: &u.alignment,
            mel: normalized,
            f0: &u.f0,
            speaker: u.speaker,
        }
    }

    /// Splices the denormalized generated frames into the unnormalized
    /// source so untouched frames stay bit-identical, then vocodes.
    fn finish(&self, u: &Utterance, out: RegenOutput) -> Result<Rendered> {
        let generated = self.normalizer.denormalize(&out.generated);
        let (spans, segments): (Vec<_>, Vec<_>) = out
            .span_pairs
            .iter()
            .map(|&(orig, (ts, te))| (orig, generated.slice_rows(ts, te)))
            .unzip();
        let mel = infer::splice_pairs(&u.mel, &spans, &segments)?;
        let wave = self.vocoder.vocode(&mel, self.griffin_lim_iters)?;
        Ok(Rendered { mel, wave, regen: out })
    }

    /// Replaces original phonemes `[a, b)` with `replacement` symbols. An
    /// empty region with no replacement returns the input audio untouched.
    pub fn edit(&self, u: &Utterance, region: (usize, usize), replacement: &[String], seed: u64) -> Result<Rendered> {
        let new = encode_phonemes(&self.vocabulary, replacement)?;
        let req = EditRequest::splice_phonemes(&u.phonemes, region.0, region.1, &new)?;
        if req.is_identity() {
            return Ok(Rendered::identity(u));
        }
        let normalized = self.normalizer.normalize(&u.mel);
        let src = self.source(u, &normalized);
        let out = infer::edit(&self.model, &self.sched, &src, &req, self.stutter_condition, seed)?;
        self.finish(u, out)
    }

    pub fn remove_stutter(&self, u: &Utterance, threshold: f64, seed: u64) -> Result<(Rendered, StutterRemoval)> {
        let normalized = self.normalizer.normalize(&u.mel);
        let src = self.source(u, &normalized);
        let removal = infer::remove_stutter(&self.model, &self.sched, &src, threshold, seed)?;
        let rendered = if removal.detected.is_empty() {
            Rendered::identity(u)
        } else {
            self.finish(u, removal.output.clone())?
        };
        Ok((rendered, removal))
    }

    pub fn stutter_labels(&self, u: &Utterance, threshold: f64) -> Result<Vec<u8>> {
        let normalized = self.normalizer.normalize(&u.mel);
        let probs = infer::stutter_probabilities(&self.model, &self.source(u, &normalized))?;
        Ok(probs.iter().map(|&p| u8::from(p >= threshold)).collect())
    }
}

/// Output mel (unnormalized log-mel) and waveform of an inference call.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub mel: Tensor,
    pub wave: Waveform,
    pub regen: RegenOutput,
}

impl Rendered {
    fn identity(u: &Utterance) -> Self {
        Self {
            mel: u.mel.clone(),
            wave: u.wave.clone(),
            regen: RegenOutput {
                mel: u.mel.clone(),
                generated: Tensor::zeros(0, u.mel.cols()),
                target_durations: u.alignment.durations(),
                predicted_durations: u.alignment.durations(),
                mu_original: Default::default(),
                mu_target: Default::default(),
                span_pairs: Vec::new(),
            },
        }
    }
}

/// Per-utterance scores; a field is `None` when it cannot be computed for
/// that utterance (e.g. too short for STOI).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScores {
    pub id: String,
    pub mcd_db: Option<f64>,
    pub stoi: Option<f64>,
    pub pred_word_ms: Vec<f64>,
    pub true_word_ms: Vec<f64>,
    pub pred_mean_f0: Option<f64>,
    pub true_mean_f0: Option<f64>,
    pub stutter_pred: Option<Vec<u8>>,
    pub stutter_true: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub utterances: usize,
    pub mcd_db: Option<f64>,
    pub stoi: Option<f64>,
    /// MSE of word durations, ms².
    pub duration_mse: Option<f64>,
    /// MSE of utterance mean F0, Hz².
    pub pitch_mse: Option<f64>,
    pub stutter: Option<LocalizationScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub aggregate: AggregateScores,
    pub per_utterance: Vec<UtteranceScores>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn mel_mcd(a: &Tensor, b: &Tensor) -> Result<f64> {
    let n = a.rows().min(b.rows());
    if n == 0 {
        return Err(validation("no frames to compare"));
    }
    let ca = mel_cepstrum(&a.slice_rows(0, n), MCD_ORDER)?;
    let cb = mel_cepstrum(&b.slice_rows(0, n), MCD_ORDER)?;
    Ok(mcd(&ca, &cb)?)
}

fn trimmed_stoi(clean: &Waveform, degraded: &Waveform) -> Option<f64> {
    let n = clean.len().min(degraded.len());
    let a = Waveform::new(clean.samples[..n].to_vec(), clean.sample_rate);
    let b = Waveform::new(degraded.samples[..n].to_vec(), degraded.sample_rate);
    stoi(&a, &b).ok()
}

fn mean_f0(wave: &Waveform, audio: &AudioConfig) -> Option<f64> {
    extract_pitch(wave, audio).ok()?.mean_voiced()
}

/// Pools per-utterance scores into corpus-level numbers.
pub fn aggregate(per: &[UtteranceScores]) -> Result<AggregateScores> {
    let mut pred_ms = Vec::new();
    let mut true_ms = Vec::new();
    for u in per {
        if u.pred_word_ms.len() == u.true_word_ms.len() {
            pred_ms.extend_from_slice(&u.pred_word_ms);
            true_ms.extend_from_slice(&u.true_word_ms);
        }
    }
    let pitch: Vec<(f64, f64)> = per.iter().filter_map(|u| Some((u.pred_mean_f0?, u.true_mean_f0?))).collect();
    let mut sp = Vec::new();
    let mut st = Vec::new();
    for u in per {
        if let (Some(p), Some(t)) = (&u.stutter_pred, &u.stutter_true) {
            if p.len() == t.len() {
                sp.extend_from_slice(p);
                st.extend_from_slice(t);
            }
        }
    }
    Ok(AggregateScores {
        utterances: per.len(),
        mcd_db: mean(per.iter().filter_map(|u| u.mcd_db)),
        stoi: mean(per.iter().filter_map(|u| u.stoi)),
        duration_mse: if pred_ms.is_empty() { None } else { Some(duration_error(&pred_ms, &true_ms)?) },
        pitch_mse: if pitch.is_empty() {
            None
        } else {
            let (p, t): (Vec<f64>, Vec<f64>) = pitch.into_iter().unzip();
            Some(pitch_error(&p, &t)?)
        },
        stutter: if sp.is_empty() { None } else { Some(stutter_localization_scores(&sp, &st)?) },
        pesq: None,
    })
}

/// Compares two sets of utterances paired by id: mel cepstra, STOI, word
/// durations from their alignments, mean F0 and stutter labels.
pub fn compare(pred: &[Utterance], reference: &[Utterance], audio: &AudioConfig) -> Result<EvalReport> {
    let single = pred.len() == 1 && reference.len() == 1;
    let mut per = Vec::new();
    for r in reference {
        let found = if single { pred.first() } else { pred.iter().find(|p| p.id == r.id) };
        let Some(p) = found else {
            return Err(validation(format!("prediction for `{}` missing", r.id)));
        };
        let frame_ms = audio.frame_ms();
        per.push(UtteranceScores {
            id: r.id.clone(),
            mcd_db: Some(mel_mcd(&p.mel, &r.mel)?),
            stoi: trimmed_stoi(&r.wave, &p.wave),
            pred_word_ms: word_durations_ms(&p.alignment.durations(), p.alignment.word_of_phoneme(), frame_ms)?,
            true_word_ms: word_durations_ms(&r.alignment.durations(), r.alignment.word_of_phoneme(), frame_ms)?,
            pred_mean_f0: mean_f0(&p.wave, audio),
            true_mean_f0: mean_f0(&r.wave, audio),
            stutter_pred: p.stutter.clone(),
            stutter_true: r.stutter.clone(),
        });
    }
    Ok(EvalReport {
        mode: "compare".into(),
        aggregate: aggregate(&per)?,
        per_utterance: per,
    })
}

/// Scores the model on reference utterances: one word per utterance is
/// masked and regenerated with its ground-truth durations (MCD over the
/// regenerated frames, STOI and mean F0 of the vocoded result), the masked
/// duration predictor's estimate for that word is compared with the truth,
/// and the stutter predictor labels every frame.
pub fn evaluate_model(engine: &Engine, utterances: &[Utterance], threshold: f64, seed: u64) -> Result<EvalReport> {
    let frame_ms = engine.audio.frame_ms();
    let mut per = Vec::new();
    for (i, u) in utterances.iter().enumerate() {
        let words = u.alignment.word_phonemes();
        let mut rng = derived_rng(seed, tags::SAMPLING, i as u64);
        let candidates: Vec<usize> = (0..words.len())
            .filter(|&w| {
                let (a, b) = words[w];
                (a..b).any(|p| engine.vocabulary.symbol(u.phonemes[p]) != Some(fluentedit_core::textgrid::SILENCE))
            })
            .collect();
        let word = if candidates.is_empty() { 0 } else { candidates[rng.random_range(0..candidates.len())] };
        let (a, b) = words[word];
        let masked: BTreeSet<usize> = (a..b).collect();
        let normalized = engine.normalizer.normalize(&u.mel);
        let src = engine.source(u, &normalized);
        let out = infer::reconstruct(&engine.model, &engine.sched, &src, &masked, engine.stutter_condition, seed ^ i as u64)?;
        let (fs, fe) = u.alignment.word_spans()[word];
        let rendered = engine.finish(u, out)?;
        let pred_ms: f64 = rendered.regen.predicted_durations[a..b].iter().sum::<usize>() as f64 * frame_ms;
        let true_ms = (fe - fs) as f64 * frame_ms;
        let stutter_pred = if engine.stutter_condition { Some(engine.stutter_labels(u, threshold)?) } else { None };
        per.push(UtteranceScores {
            id: u.id.clone(),
            mcd_db: Some(mel_mcd(&rendered.mel.slice_rows(fs, fe), &u.mel.slice_rows(fs, fe))?),
            stoi: trimmed_stoi(&u.wave, &rendered.wave),
            pred_word_ms: vec![pred_ms],
            true_word_ms: vec![true_ms],
            pred_mean_f0: mean_f0(&rendered.wave, &engine.audio),
            true_mean_f0: mean_f0(&u.wave, &engine.audio),
            stutter_pred,
            stutter_true: u.stutter.clone(),
        });
    }
    Ok(EvalReport {
        mode: "model".into(),
        aggregate: aggregate(&per)?,
        per_utterance: per,
    })
}

/// Loads every utterance of a manifest or a single WAV file. A lone WAV
/// becomes a one-utterance set with a single silence phoneme spanning it.
pub fn load_inputs(path: &Path, vocab: &Vocabulary, audio: &AudioConfig) -> Result<Vec<Utterance>> {
    if path.extension().is_some_and(|e| e == "wav") {
        let wave = crate::io::read_wav(path)?;
        let mel = mel_spectrogram(&wave, audio)?.frames;
        let f0 = extract_pitch(&wave, audio)?.f0;
        let n = mel.rows();
        let alignment = fluentedit_core::Alignment::from_durations(&[n], vec![0])?;
        let sil = fluentedit_core::textgrid::SILENCE.to_string();
        return Ok(vec![Utterance {
            id: path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
            wave,
            phoneme_symbols: vec![sil.clone()],
            phonemes: encode_phonemes(vocab, &[sil])?,
            alignment,
            mel,
            f0,
            speaker: 0,
            stutter: None,
        }]);
    }
    let manifest = Manifest::read(path)?;
    crate::training::load_corpus(&manifest, vocab, audio)
}

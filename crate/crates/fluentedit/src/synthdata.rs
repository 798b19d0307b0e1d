//! Deterministic toy corpus: harmonic tones stand in for phonemes, speakers
//! differ in base pitch and timbre, durations follow a predecessor rule
//! scaled by a hidden per-utterance tempo, and injected fillers and phoneme
//! repetitions carry exact frame labels.

use std::path::{Path, PathBuf};

use fluentedit_core::audio::AudioConfig;
use fluentedit_core::rng::derived_rng;
use fluentedit_core::textgrid::{Alignment, FILLER, SILENCE, TONE_PHONEMES};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{validation, Result};
use crate::io::{write_json, write_wav, AlignmentFile, Manifest, ManifestEntry, StutterSpan, StutterType};

const TAG_UTTERANCE: u64 = 0x5301;
const RAMP_SEC: f64 = 0.01;
const AMPLITUDE: f64 = 0.3;
const HARMONICS: usize = 6;
const FILLER_HARMONICS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub vocab_size: usize,
    pub n_speakers: usize,
    /// Fraction of utterances that receive one injected stutter.
    pub stutter_rate: f64,
    pub seed: u64,
    pub min_words: usize,
    pub max_words: usize,
    pub max_word_phonemes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_utterances: 200,
            vocab_size: TONE_PHONEMES,
            n_speakers: 4,
            stutter_rate: 0.3,
            seed: 7,
            min_words: 3,
            max_words: 4,
            max_word_phonemes: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 || self.n_speakers == 0 {
            return Err(validation("synthetic corpus needs positive utterance and speaker counts"));
        }
        if self.vocab_size == 0 || self.vocab_size > TONE_PHONEMES {
            return Err(validation(format!("vocab_size must be in 1..={TONE_PHONEMES}")));
        }
        if !(0.0..=1.0).contains(&self.stutter_rate) {
            return Err(validation(format!("stutter_rate {} outside [0, 1]", self.stutter_rate)));
        }
        if self.min_words == 0 || self.min_words > self.max_words || self.max_word_phonemes == 0 {
            return Err(validation("need 0 < min_words <= max_words and max_word_phonemes > 0"));
        }
        Ok(())
    }
}

/// What each phoneme position sounds like.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sound {
    Silence,
    Tone(usize),
    Filler,
}

impl Sound {
    pub fn symbol(self) -> String {
        match self {
            Sound::Silence => SILENCE.to_string(),
            Sound::Tone(i) => format!("T{i:02}"),
            Sound::Filler => FILLER.to_string(),
        }
    }

    /// Index into the duration tables.
    fn class(self, vocab: usize) -> usize {
        match self {
            Sound::Tone(i) => i,
            Sound::Silence => vocab,
            Sound::Filler => vocab + 1,
        }
    }
}

/// Base frame count of a sound.
pub fn base_duration(class: usize) -> f64 {
    (3 + (class * 7) % 5) as f64
}

/// Frames added by the preceding sound.
pub fn context_shift(prev_class: usize) -> f64 {
    ((prev_class * 5) % 4) as f64 - 1.0
}

/// Duration rule: `round(tempo · (base(p) + shift(prev)))`, at least 2.
pub fn rule_duration(class: usize, prev_class: usize, tempo: f64) -> usize {
    ((tempo * (base_duration(class) + context_shift(prev_class))).round() as usize).max(2)
}

pub fn speaker_f0(speaker: usize) -> f64 {
    110.0 * 1.3f64.powi(speaker as i32)
}

fn speaker_weights(speaker: usize) -> [f64; FILLER_HARMONICS] {
    let tilt = 0.6 + 0.4 * (speaker % 4) as f64;
    let mut w = [0.0; FILLER_HARMONICS];
    for (h, v) in w.iter_mut().enumerate() {
        *v = 1.0 / ((h + 1) as f64).powf(tilt);
    }
    w
}

fn tone_ratio(tone: usize, vocab: usize) -> f64 {
    2f64.powf((tone as f64 - vocab as f64 / 2.0) / 24.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub sounds: Vec<Sound>,
    pub durations: Vec<usize>,
    pub words: Vec<usize>,
    /// Frame spans of injected stutters.
    pub stutters: Vec<((usize, usize), StutterType)>,
    pub tempo: f64,
    pub pitch_factor: f64,
    /// Fundamental of each phoneme, 0 for silence.
    pub f0: Vec<f64>,
    pub wave: Waveform,
}

impl SynthUtterance {
    pub fn symbols(&self) -> Vec<String> {
        self.sounds.iter().map(|s| s.symbol()).collect()
    }

    pub fn n_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn alignment(&self) -> Alignment {
        Alignment::from_durations(&self.durations, self.words.clone()).expect("durations are positive and words ordered")
    }

    pub fn stutter_frame_labels(&self) -> Vec<u8> {
        let mut labels = vec![0u8; self.n_frames()];
        for &((s, e), _) in &self.stutters {
            labels[s..e].iter_mut().for_each(|l| *l = 1);
        }
        labels
    }
}

/// Builds utterance `index` from its own derived random stream.
pub fn synthesize_utterance(cfg: &SynthConfig, audio: &AudioConfig, index: usize) -> SynthUtterance {
    let mut rng = derived_rng(cfg.seed, TAG_UTTERANCE, index as u64);
    let speaker = rng.random_range(0..cfg.n_speakers);
    let tempo = rng.random_range(0.7..1.4);
    let pitch_factor = rng.random_range(0.92..1.08);
    let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
    let mut word_sounds: Vec<Vec<Sound>> = (0..n_words)
        .map(|_| {
            let n = rng.random_range(1..=cfg.max_word_phonemes);
            (0..n).map(|_| Sound::Tone(rng.random_range(0..cfg.vocab_size))).collect()
        })
        .collect();
    let mut stutter_word: Option<(usize, StutterType)> = None;
    if rng.random_bool(cfg.stutter_rate) {
        let at = rng.random_range(0..n_words);
        if rng.random_bool(0.5) {
            word_sounds.insert(at, vec![Sound::Filler]);
            stutter_word = Some((at, StutterType::Filler));
        } else {
            let first = word_sounds[at][0];
            word_sounds.insert(at, vec![first]);
            stutter_word = Some((at, StutterType::Repetition));
        }
    }
    let mut sounds = vec![Sound::Silence];
    let mut words = vec![0];
    for (w, ws) in word_sounds.iter().enumerate() {
        for &s in ws {
            sounds.push(s);
            words.push(w + 1);
        }
    }
    sounds.push(Sound::Silence);
    words.push(word_sounds.len() + 1);

    let vocab = cfg.vocab_size;
    let mut durations = Vec::with_capacity(sounds.len());
    for (i, s) in sounds.iter().enumerate() {
        let prev = if i == 0 { Sound::Silence } else { sounds[i - 1] };
        let extra = if *s == Sound::Filler { 3.0 } else { 0.0 };
        let d = rule_duration(s.class(vocab), prev.class(vocab), tempo) + (tempo * extra).round() as usize;
        durations.push(d);
    }

    let stutters = stutter_word
        .map(|(w, kind)| {
            let p = words.iter().position(|&x| x == w + 1).expect("stutter word exists");
            let start: usize = durations[..p].iter().sum();
            vec![((start, start + durations[p]), kind)]
        })
        .unwrap_or_default();

    let base = speaker_f0(speaker) * pitch_factor;
    let f0: Vec<f64> = sounds
        .iter()
        .map(|s| match s {
            Sound::Silence => 0.0,
            Sound::Tone(t) => base * tone_ratio(*t, vocab),
            Sound::Filler => base * 0.85,
        })
        .collect();
    let wave = render(&sounds, &durations, &f0, speaker, audio);
    SynthUtterance {
        id: format!("utt{index:05}"),
        speaker,
        sounds,
        durations,
        words,
        stutters,
        tempo,
        pitch_factor,
        f0,
        wave,
    }
}

fn render(sounds: &[Sound], durations: &[usize], f0: &[f64], speaker: usize, audio: &AudioConfig) -> Waveform {
    let sr = audio.sample_rate as f64;
    let hop = audio.hop_size;
    let total: usize = durations.iter().sum::<usize>() * hop;
    let mut out = vec![0.0; total];
    let weights = speaker_weights(speaker);
    let ramp = (RAMP_SEC * sr) as usize;
    let mut start = 0;
    for ((s, &d), &f) in sounds.iter().zip(durations).zip(f0) {
        let len = d * hop;
        let (n_harm, brightness) = match s {
            Sound::Silence => (0, 0.0),
            Sound::Tone(t) => (HARMONICS, 0.5 + 0.25 * (t % 3) as f64),
            Sound::Filler => (FILLER_HARMONICS, 1.0),
        };
        let norm: f64 = (0..n_harm).map(|h| weights[h] * brightness.powi(h as i32)).sum();
        for i in 0..len {
            let t = i as f64 / sr;
            let mut v = 0.0;
            for h in 0..n_harm {
                let w = weights[h] * brightness.powi(h as i32) / norm;
                v += w * (2.0 * std::f64::consts::PI * f * (h + 1) as f64 * t).sin();
            }
            if *s == Sound::Filler {
                v *= 0.75 + 0.25 * (2.0 * std::f64::consts::PI * 6.0 * t).cos();
            }
            let env = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
            out[start + i] = AMPLITUDE * env * v;
        }
        start += len;
    }
    Waveform::new(out, audio.sample_rate)
}

/// Writes WAVs, alignments, stutter labels and `manifest.jsonl` under
/// `out_dir` and returns the manifest path.
pub fn generate_corpus(cfg: &SynthConfig, audio: &AudioConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    audio.validate()?;
    let out = out_dir.as_ref();
    let mut entries = Vec::with_capacity(cfg.n_utterances);
    for i in 0..cfg.n_utterances {
        let u = synthesize_utterance(cfg, audio, i);
        let wav = format!("wavs/{}.wav", u.id);
        let alignment = format!("alignments/{}.json", u.id);
        let labels = format!("labels/{}.json", u.id);
        write_wav(out.join(&wav), &u.wave)?;
        write_json(out.join(&alignment), &AlignmentFile::from_alignment(u.symbols(), &u.alignment(), audio))?;
        let spans: Vec<StutterSpan> = u
            .stutters
            .iter()
            .map(|&((s, e), kind)| StutterSpan {
                start_sec: audio.frame_to_sec(s),
                end_sec: audio.frame_to_sec(e),
                kind,
            })
            .collect();
        write_json(out.join(&labels), &spans)?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            wav,
            phonemes: u.symbols(),
            alignment,
            speaker: u.speaker,
            stutter_labels: Some(labels),
        });
    }
    write_json(out.join("synth_config.json"), cfg)?;
    let manifest = out.join("manifest.jsonl");
    Manifest::write(&manifest, &entries)?;
    Ok(manifest)
}

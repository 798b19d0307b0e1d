//! File formats: 16-bit PCM WAV, `.npy` spectrograms, alignment and stutter
//! label JSON, and the JSON-lines utterance manifest.

use std::fs;
use std::path::{Path, PathBuf};

use fluentedit_core::audio::AudioConfig;
use fluentedit_core::textgrid::{stutter_spans_to_frames, Alignment, Vocabulary};
use fluentedit_core::Tensor;
use ndarray::Array2;
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{validation, AppError, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(AppError::format(
            path,
            format!(
                "expected mono 16-bit PCM, found {} channel(s), {} bits, {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM, clipping to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        w.write_sample(quantize(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// 16-bit code of a sample; `quantize(v) / 32768` reproduces values read
/// back from a WAV file exactly.
pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn wav_err(path: &Path, e: hound::Error) -> AppError {
    match e {
        hound::Error::IoError(io) => AppError::io(path, io),
        other => AppError::format(path, other),
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
    }
    Ok(())
}

pub fn write_npy(path: impl AsRef<Path>, mel: &Tensor) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let arr = Array2::from_shape_vec((mel.rows(), mel.cols()), mel.data().to_vec())
        .map_err(|e| AppError::format(path, e))?;
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    arr.write_npy(std::io::BufWriter::new(file)).map_err(|e| AppError::format(path, e))
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let arr = Array2::<f64>::read_npy(std::io::BufReader::new(file)).map_err(|e| AppError::format(path, e))?;
    let (rows, cols) = arr.dim();
    Ok(Tensor::from_vec(rows, cols, arr.iter().copied().collect())?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}

/// Per-phoneme time alignment as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub phonemes: Vec<String>,
    pub starts_sec: Vec<f64>,
    pub ends_sec: Vec<f64>,
    /// Word index of each phoneme.
    pub words: Vec<usize>,
}

impl AlignmentFile {
    pub fn from_alignment(phonemes: Vec<String>, al: &Alignment, cfg: &AudioConfig) -> Self {
        let spans = al.spans();
        Self {
            phonemes,
            starts_sec: spans.iter().map(|&(s, _)| cfg.frame_to_sec(s)).collect(),
            ends_sec: spans.iter().map(|&(_, e)| cfg.frame_to_sec(e)).collect(),
            words: al.word_of_phoneme().to_vec(),
        }
    }

    pub fn to_alignment(&self, n_frames: usize, cfg: &AudioConfig) -> Result<Alignment> {
        if self.phonemes.len() != self.starts_sec.len() {
            return Err(validation(format!(
                "alignment lists {} phonemes but {} start times",
                self.phonemes.len(),
                self.starts_sec.len()
            )));
        }
        Ok(Alignment::from_seconds(&self.starts_sec, &self.ends_sec, self.words.clone(), n_frames, cfg)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StutterType {
    Repetition,
    Filler,
    Other,
}

/// One labeled or detected stutter interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StutterSpan {
    pub start_sec: f64,
    pub end_sec: f64,
    #[serde(rename = "type")]
    pub kind: StutterType,
}

pub fn stutter_frames(spans: &[StutterSpan], n_frames: usize, cfg: &AudioConfig) -> Result<Vec<u8>> {
    let pairs: Vec<(f64, f64)> = spans.iter().map(|s| (s.start_sec, s.end_sec)).collect();
    Ok(stutter_spans_to_frames(&pairs, n_frames, cfg)?.frame_labels)
}

/// Frame spans `[s, e)` as time intervals bounded by frame centres.
pub fn frame_spans_to_stutter(spans: &[(usize, usize)], kind: StutterType, cfg: &AudioConfig) -> Vec<StutterSpan> {
    spans
        .iter()
        .map(|&(s, e)| StutterSpan {
            start_sec: cfg.frame_to_sec(s),
            end_sec: cfg.frame_to_sec(e),
            kind,
        })
        .collect()
}

/// One manifest line. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: String,
    pub phonemes: Vec<String>,
    pub alignment: String,
    pub speaker: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stutter_labels: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| AppError::format(path, format!("line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        if entries.is_empty() {
            return Err(validation(format!("manifest {} has no utterances", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn write(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        let mut text = String::new();
        for e in entries {
            text.push_str(&serde_json::to_string(e).map_err(|err| AppError::format(path, err))?);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| AppError::io(path, e))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.path.parent().unwrap_or(Path::new(".")).join(relative)
    }

    pub fn find(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| validation(format!("utterance `{id}` not in {}", self.path.display())))
    }
}

/// An utterance with its features extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub wave: Waveform,
    pub phoneme_symbols: Vec<String>,
    pub phonemes: Vec<usize>,
    pub alignment: Alignment,
    /// Unnormalized log-mel.
    pub mel: Tensor,
    pub f0: Vec<f64>,
    pub speaker: usize,
    pub stutter: Option<Vec<u8>>,
}

/// Reads the audio, alignment and labels of one entry and extracts
/// features.
pub fn load_utterance(manifest: &Manifest, entry: &ManifestEntry, vocab: &Vocabulary, cfg: &AudioConfig) -> Result<Utterance> {
    let wav_path = manifest.resolve(&entry.wav);
    let wave = read_wav(&wav_path)?;
    let mel = crate::dsp::mel_spectrogram(&wave, cfg).map_err(|e| AppError::format(&wav_path, e))?;
    let f0 = crate::dsp::extract_pitch(&wave, cfg).map_err(|e| AppError::format(&wav_path, e))?;
    let n_frames = mel.n_frames();
    let al_path = manifest.resolve(&entry.alignment);
    let al_file: AlignmentFile = read_json(&al_path)?;
    if al_file.phonemes != entry.phonemes {
        return Err(AppError::format(&al_path, format!("phonemes differ from manifest entry `{}`", entry.id)));
    }
    let alignment = al_file.to_alignment(n_frames, cfg).map_err(|e| AppError::format(&al_path, e))?;
    let phonemes = encode_phonemes(vocab, &entry.phonemes)?;
    let stutter = match &entry.stutter_labels {
        Some(rel) => {
            let p = manifest.resolve(rel);
            let spans: Vec<StutterSpan> = read_json(&p)?;
            Some(stutter_frames(&spans, n_frames, cfg).map_err(|e| AppError::format(&p, e))?)
        }
        None => None,
    };
    Ok(Utterance {
        id: entry.id.clone(),
        wave,
        phoneme_symbols: entry.phonemes.clone(),
        phonemes,
        alignment,
        mel: mel.frames,
        f0: f0.f0,
        speaker: entry.speaker,
        stutter,
    })
}

pub fn encode_phonemes(vocab: &Vocabulary, symbols: &[String]) -> Result<Vec<usize>> {
    symbols
        .iter()
        .map(|s| vocab.id(s).ok_or_else(|| validation(format!("unknown phoneme `{s}`"))))
        .collect()
}

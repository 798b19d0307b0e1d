//! Phonemes, alignments, frame masks and stutter labels.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

pub const PAD: &str = "<pad>";
pub const WORD_BOUNDARY: &str = "<wb>";
pub const SILENCE: &str = "sil";
pub const FILLER: &str = "fil";

const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Number of tone phonemes `T00..T23` used by the synthetic corpus.
pub const TONE_PHONEMES: usize = 24;

/// Fixed phoneme inventory: special tokens, ARPAbet (stress digits are
/// stripped on lookup) and the synthetic tone phonemes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut symbols: Vec<String> = [PAD, WORD_BOUNDARY, SILENCE, FILLER].iter().map(|s| s.to_string()).collect();
        symbols.extend(ARPABET.iter().map(|s| s.to_string()));
        symbols.extend((0..TONE_PHONEMES).map(|i| format!("T{i:02}")));
        Self { symbols }
    }
}

impl Vocabulary {
    pub fn from_symbols(symbols: Vec<String>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        if let Some(i) = self.symbols.iter().position(|s| s == symbol) {
            return Some(i);
        }
        let stripped = symbol.trim_end_matches(|c: char| c.is_ascii_digit());
        let upper = stripped.to_ascii_uppercase();
        self.symbols.iter().position(|s| *s == upper)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<PhonemeSequence> {
        let ids = symbols
            .iter()
            .map(|s| {
                self.id(s.as_ref())
                    .ok_or_else(|| invalid("phonemes", format!("unknown phoneme `{}`", s.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PhonemeSequence { ids })
    }

    pub fn decode(&self, seq: &PhonemeSequence) -> Vec<String> {
        seq.ids.iter().map(|&i| self.symbols.get(i).cloned().unwrap_or_default()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&i| i >= vocab_size) {
            Some(bad) => Err(Error::OutOfRange {
                what: "phoneme id",
                reason: format!("{bad} >= vocabulary size {vocab_size}"),
            }),
            None => Ok(()),
        }
    }
}

/// Phoneme-to-frame alignment: contiguous half-open frame spans, one per
/// phoneme, plus the word each phoneme belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    spans: Vec<(usize, usize)>,
    word_of_phoneme: Vec<usize>,
}

impl Alignment {
    pub fn from_durations(durations: &[usize], word_of_phoneme: Vec<usize>) -> Result<Self> {
        if durations.len() != word_of_phoneme.len() {
            return Err(shape_err(
                "Alignment::from_durations",
                format!("{} word indices", durations.len()),
                format!("{}", word_of_phoneme.len()),
            ));
        }
        let mut spans = Vec::with_capacity(durations.len());
        let mut t = 0;
        for &d in durations {
            spans.push((t, t + d));
            t += d;
        }
        let a = Self { spans, word_of_phoneme };
        a.validate_words()?;
        Ok(a)
    }

    /// Builds frame spans from times in seconds, snapping boundaries to the
    /// nearest frame. The final boundary is pinned to `n_frames` when it lands
    /// within one frame of it.
    pub fn from_seconds(
        starts_sec: &[f64],
        ends_sec: &[f64],
        word_of_phoneme: Vec<usize>,
        n_frames: usize,
        config: &AudioConfig,
    ) -> Result<Self> {
        let n = starts_sec.len();
        if ends_sec.len() != n || word_of_phoneme.len() != n {
            return Err(shape_err(
                "Alignment::from_seconds",
                format!("{n} starts, ends and words"),
                format!("{} ends, {} words", ends_sec.len(), word_of_phoneme.len()),
            ));
        }
        if n == 0 {
            return Err(invalid("alignment", "no phonemes"));
        }
        let mut bounds: Vec<usize> = Vec::with_capacity(n + 1);
        for i in 0..n {
            if ends_sec[i] < starts_sec[i] {
                return Err(invalid("alignment", format!("phoneme {i} ends before it starts")));
            }
            if i > 0 && (starts_sec[i] - ends_sec[i - 1]).abs() > 1e-3 {
                return Err(invalid("alignment", format!("gap or overlap before phoneme {i}")));
            }
            bounds.push(config.sec_to_frame(starts_sec[i]));
        }
        bounds.push(config.sec_to_frame(ends_sec[n - 1]));
        if bounds[0] != 0 {
            return Err(invalid("alignment", "first phoneme must start at 0"));
        }
        let last = bounds[n];
        if last.abs_diff(n_frames) > 1 {
            return Err(invalid(
                "alignment",
                format!("alignment covers {last} frames but the audio has {n_frames}"),
            ));
        }
        bounds[n] = n_frames;
        for i in 0..n {
            if bounds[i + 1] < bounds[i] {
                bounds[i + 1] = bounds[i];
            }
        }
        let spans = (0..n).map(|i| (bounds[i], bounds[i + 1])).collect();
        let a = Self { spans, word_of_phoneme };
        a.validate_words()?;
        Ok(a)
    }

    fn validate_words(&self) -> Result<()> {
        if self.word_of_phoneme.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(invalid("alignment", "word indices must be non-decreasing and contiguous"));
        }
        if self.word_of_phoneme.first().is_some_and(|&w| w != 0) {
            return Err(invalid("alignment", "word indices must start at 0"));
        }
        Ok(())
    }

    pub fn n_phonemes(&self) -> usize {
        self.spans.len()
    }

    pub fn n_frames(&self) -> usize {
        self.spans.last().map_or(0, |s| s.1)
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn span(&self, phoneme: usize) -> (usize, usize) {
        self.spans[phoneme]
    }

    pub fn durations(&self) -> Vec<usize> {
        self.spans.iter().map(|(s, e)| e - s).collect()
    }

    pub fn word_of_phoneme(&self) -> &[usize] {
        &self.word_of_phoneme
    }

    pub fn n_words(&self) -> usize {
        self.word_of_phoneme.last().map_or(0, |w| w + 1)
    }

    /// Phoneme index range of each word.
    pub fn word_phonemes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(self.n_words());
        for (p, &w) in self.word_of_phoneme.iter().enumerate() {
            if w == out.len() {
                out.push((p, p + 1));
            } else {
                out[w].1 = p + 1;
            }
        }
        out
    }

    /// Frame span of each word.
    pub fn word_spans(&self) -> Vec<(usize, usize)> {
        self.word_phonemes()
            .into_iter()
            .map(|(a, b)| (self.spans[a].0, self.spans[b - 1].1))
            .collect()
    }

    /// Owning phoneme of every frame.
    pub fn frame_owners(&self) -> Vec<usize> {
        frame_owners(&self.durations())
    }
}

/// Prefix-sum map from frame to owning phoneme.
pub fn frame_owners(durations: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(durations.iter().sum());
    for (i, &d) in durations.iter().enumerate() {
        out.extend(core::iter::repeat_n(i, d));
    }
    out
}

/// Disjoint, sorted frame intervals marking the region to regenerate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskSpec {
    spans: Vec<(usize, usize)>,
    masked_phonemes: BTreeSet<usize>,
}

impl MaskSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes arbitrary intervals into sorted maximal disjoint spans.
    pub fn from_spans(spans: impl IntoIterator<Item = (usize, usize)>, masked_phonemes: BTreeSet<usize>) -> Self {
        Self {
            spans: merge_spans(spans.into_iter().collect()),
            masked_phonemes,
        }
    }

    pub fn from_frame_flags(flags: &[bool]) -> Self {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, &f) in flags.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    spans.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((s, flags.len()));
        }
        Self {
            spans,
            masked_phonemes: BTreeSet::new(),
        }
    }

    /// Every phoneme in `phonemes` with its frames.
    pub fn from_phonemes(alignment: &Alignment, phonemes: BTreeSet<usize>) -> Self {
        let spans = phonemes.iter().map(|&p| alignment.span(p)).filter(|(s, e)| e > s).collect();
        Self::from_spans_vec(spans, phonemes)
    }

    fn from_spans_vec(spans: Vec<(usize, usize)>, masked_phonemes: BTreeSet<usize>) -> Self {
        Self {
            spans: merge_spans(spans),
            masked_phonemes,
        }
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn masked_phonemes(&self) -> &BTreeSet<usize> {
        &self.masked_phonemes
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn n_masked_frames(&self) -> usize {
        self.spans.iter().map(|(s, e)| e - s).sum()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.spans.iter().any(|&(s, e)| s <= frame && frame < e)
    }

    pub fn frame_flags(&self, n_frames: usize) -> Vec<bool> {
        let mut flags = vec![false; n_frames];
        for &(s, e) in &self.spans {
            for f in flags.iter_mut().take(e.min(n_frames)).skip(s) {
                *f = true;
            }
        }
        flags
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        match self.spans.last() {
            Some(&(_, e)) if e > n_frames => Err(Error::OutOfRange {
                what: "mask span",
                reason: format!("ends at frame {e} but only {n_frames} frames exist"),
            }),
            _ => Ok(()),
        }
    }

    pub fn union(&self, other: &MaskSpec) -> MaskSpec {
        let mut spans = self.spans.clone();
        spans.extend_from_slice(&other.spans);
        let mut ph = self.masked_phonemes.clone();
        ph.extend(other.masked_phonemes.iter().copied());
        Self::from_spans_vec(spans, ph)
    }

    /// Phonemes with at least one frame inside the mask.
    pub fn overlapping_phonemes(&self, alignment: &Alignment) -> BTreeSet<usize> {
        alignment
            .spans()
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| self.spans.iter().any(|&(ms, me)| ms < e && s < me))
            .map(|(i, _)| i)
            .collect()
    }
}

fn merge_spans(mut spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    spans.retain(|(s, e)| e > s);
    spans.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Binary per-frame stutter labels (1 = stutter).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StutterLabel {
    pub frame_labels: Vec<u8>,
}

impl StutterLabel {
    pub fn fluent(n_frames: usize) -> Self {
        Self {
            frame_labels: vec![0; n_frames],
        }
    }

    pub fn len(&self) -> usize {
        self.frame_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_labels.is_empty()
    }

    pub fn any(&self) -> bool {
        self.frame_labels.contains(&1)
    }

    pub fn as_mask(&self) -> MaskSpec {
        let flags: Vec<bool> = self.frame_labels.iter().map(|&l| l == 1).collect();
        MaskSpec::from_frame_flags(&flags)
    }
}

/// Repeats row `i` of `phoneme_vectors` `durations[i]` times.
pub fn length_regulate(phoneme_vectors: &Tensor, durations: &[i64]) -> Result<Tensor> {
    if durations.len() != phoneme_vectors.rows() {
        return Err(shape_err(
            "length_regulate",
            format!("{} durations", phoneme_vectors.rows()),
            format!("{}", durations.len()),
        ));
    }
    let durs = durations
        .iter()
        .map(|&d| usize::try_from(d).map_err(|_| invalid("durations", format!("negative duration {d}"))))
        .collect::<Result<Vec<_>>>()?;
    let owners = frame_owners(&durs);
    let cols = phoneme_vectors.cols();
    let mut out = Tensor::zeros(owners.len(), cols);
    for (f, &p) in owners.iter().enumerate() {
        out.row_mut(f).copy_from_slice(phoneme_vectors.row(p));
    }
    Ok(out)
}

/// Selects each phoneme independently with probability `rate` and masks its
/// frames.
pub fn sample_mask_spans(alignment: &Alignment, rate: f64, seed: u64) -> Result<MaskSpec> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid("rate", format!("mask rate {rate} outside [0, 1]")));
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = BTreeSet::new();
    for p in 0..alignment.n_phonemes() {
        // Draw for every phoneme so the stream position is independent of `rate`.
        let u: f64 = rng.random();
        if u < rate {
            chosen.insert(p);
        }
    }
    Ok(MaskSpec::from_phonemes(alignment, chosen))
}

/// Replaces masked frames with `mask_vector`; other rows are copied as is.
pub fn apply_mask(frames: &Tensor, mask: &MaskSpec, mask_vector: &[f64]) -> Result<Tensor> {
    if mask_vector.len() != frames.cols() {
        return Err(shape_err(
            "apply_mask",
            format!("mask vector of {} values", frames.cols()),
            format!("{}", mask_vector.len()),
        ));
    }
    mask.validate(frames.rows())?;
    let mut out = frames.clone();
    for &(s, e) in mask.spans() {
        for f in s..e {
            out.row_mut(f).copy_from_slice(mask_vector);
        }
    }
    Ok(out)
}

/// Frame `f` is labelled 1 iff its centre time lies in one of the spans.
pub fn stutter_spans_to_frames(spans: &[(f64, f64)], n_frames: usize, config: &AudioConfig) -> Result<StutterLabel> {
    let duration = (n_frames * config.hop_size) as f64 / config.sample_rate as f64;
    let tol = config.hop_size as f64 / config.sample_rate as f64;
    for &(s, e) in spans {
        if !(s < e) || s < 0.0 || e > duration + tol {
            return Err(Error::OutOfRange {
                what: "stutter span",
                reason: format!("[{s}, {e}) is not a valid span inside {duration:.3} s of audio"),
            });
        }
    }
    let frame_labels = (0..n_frames)
        .map(|f| {
            let t = config.frame_center_sec(f);
            u8::from(spans.iter().any(|&(s, e)| s <= t && t < e))
        })
        .collect();
    Ok(StutterLabel { frame_labels })
}

/// Grows a detected stutter region to whole phonemes plus one adjacent word
/// per interval.
///
/// Each maximal interval is first widened to the phonemes it touches. Of the
/// two words bordering the widened interval, the one whose outer boundary is
/// closer (in frames) is added; ties go to the following word.
pub fn expand_stutter_region(mu_prime: &MaskSpec, alignment: &Alignment) -> MaskSpec {
    let n = alignment.n_frames();
    if mu_prime.is_empty() || n == 0 {
        return mu_prime.clone();
    }
    let owners = alignment.frame_owners();
    let words = alignment.word_of_phoneme();
    let word_spans = alignment.word_spans();
    let mut out: Vec<(usize, usize)> = mu_prime.spans().to_vec();
    for &(s, e) in mu_prime.spans() {
        let s = s.min(n - 1);
        let e = e.min(n);
        if e <= s {
            continue;
        }
        let start = alignment.span(owners[s]).0;
        let end = alignment.span(owners[e - 1]).1;
        out.push((start, end));
        let prev = (start > 0).then(|| {
            let w = words[owners[start - 1]];
            let ws = word_spans[w].0;
            (start - ws, (ws, start))
        });
        let next = (end < n).then(|| {
            let w = words[owners[end]];
            let we = word_spans[w].1;
            (we - end, (end, we))
        });
        let pick = match (prev, next) {
            (Some(p), Some(nx)) => Some(if p.0 < nx.0 { p.1 } else { nx.1 }),
            (Some(p), None) => Some(p.1),
            (None, Some(nx)) => Some(nx.1),
            (None, None) => None,
        };
        if let Some(span) = pick {
            out.push(span);
        }
    }
    let merged = MaskSpec::from_spans_vec(out, BTreeSet::new());
    let phonemes = merged.overlapping_phonemes(alignment);
    MaskSpec {
        spans: merged.spans,
        masked_phonemes: phonemes,
    }
}

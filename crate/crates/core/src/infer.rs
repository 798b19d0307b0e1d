//! Text-based editing and automatic stutter removal at the spectrogram level.
//!
//! Both procedures reduce to a [`RegenPlan`]: a target phoneme sequence, the
//! subset of it to regenerate, and the pairing between regenerated target
//! runs and the original frames they replace. Everything outside those runs
//! is copied from the source spectrogram unchanged.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSchedule;
use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::Graph;
use crate::nets::{durations_from_log, log_durations, log_pitch, pitch_from_log, FluentSpeech};
use crate::tensor::Tensor;
use crate::textgrid::{expand_stutter_region, Alignment, MaskSpec};

/// Predicted F0 below this is treated as unvoiced.
pub const MIN_VOICED_HZ: f64 = 40.0;
/// Share of a phoneme's frames that must be detected as stutter for the
/// phoneme to be deleted.
pub const REMOVAL_COVERAGE: f64 = 0.8;
pub const DEFAULT_STUTTER_THRESHOLD: f64 = 0.5;

/// Source utterance in normalized mel space.
#[derive(Debug, Clone, Copy)]
pub struct SourceUtterance<'a> {
    pub phonemes: &'a [usize],
    pub alignment: &'a Alignment,
    pub mel: &'a Tensor,
    pub f0: &'a [f64],
    pub speaker: usize,
}

impl SourceUtterance<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.mel.rows();
        if self.alignment.n_phonemes() != self.phonemes.len() || self.alignment.n_frames() != n {
            return Err(invalid("alignment", "alignment does not match the phonemes and mel frames"));
        }
        if self.f0.len() != n {
            return Err(shape_err("source utterance", format!("{n} F0 values"), format!("{}", self.f0.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOperation {
    Insert,
    Replace,
    Delete,
}

/// A text edit: `target = original[..a] ++ new ++ original[b..]`, with the
/// edit region `[a, a + new.len())` given in target indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub original_phonemes: Vec<usize>,
    pub target_phonemes: Vec<usize>,
    pub edit_region: (usize, usize),
    pub operation: EditOperation,
}

impl EditRequest {
    /// Replaces original phonemes `[a, b)` with `new`.
    pub fn splice_phonemes(original: &[usize], a: usize, b: usize, new: &[usize]) -> Result<Self> {
        if a > b || b > original.len() {
            return Err(Error::OutOfRange {
                what: "edit region",
                reason: format!("[{a}, {b}) outside {} phonemes", original.len()),
            });
        }
        let mut target = original[..a].to_vec();
        target.extend_from_slice(new);
        target.extend_from_slice(&original[b..]);
        let operation = match (a == b, new.is_empty()) {
            (_, true) => EditOperation::Delete,
            (true, false) => EditOperation::Insert,
            (false, false) => EditOperation::Replace,
        };
        Ok(Self {
            original_phonemes: original.to_vec(),
            target_phonemes: target,
            edit_region: (a, a + new.len()),
            operation,
        })
    }

    /// Original phoneme range replaced by the edit region.
    pub fn original_range(&self) -> Result<(usize, usize)> {
        let (a, e) = self.edit_region;
        let (no, nt) = (self.original_phonemes.len(), self.target_phonemes.len());
        if a > e || e > nt {
            return Err(Error::OutOfRange {
                what: "edit region",
                reason: format!("[{a}, {e}) outside {nt} target phonemes"),
            });
        }
        let kept_suffix = nt - e;
        if a + kept_suffix > no {
            return Err(invalid("edit request", "target keeps more phonemes than the original has"));
        }
        let b = no - kept_suffix;
        if self.target_phonemes[..a] != self.original_phonemes[..a] || self.target_phonemes[e..] != self.original_phonemes[b..] {
            return Err(invalid("edit request", "target differs from the original outside the edit region"));
        }
        let expected = match (a == b, a == e) {
            (false, true) => Some(EditOperation::Delete),
            (true, false) => Some(EditOperation::Insert),
            (false, false) => Some(EditOperation::Replace),
            (true, true) => None,
        };
        if expected.is_some_and(|op| op != self.operation) {
            return Err(invalid("edit request", format!("operation {:?} does not match the region", self.operation)));
        }
        Ok((a, b))
    }

    pub fn is_identity(&self) -> bool {
        self.edit_region.0 == self.edit_region.1 && self.original_phonemes == self.target_phonemes
    }
}

/// What to regenerate and how it lines up with the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegenPlan {
    pub target_phonemes: Vec<usize>,
    /// Original phoneme index of each target phoneme, when it has one.
    pub source_of_target: Vec<Option<usize>>,
    /// Target phonemes whose duration, pitch and frames are regenerated.
    pub target_mask: Vec<bool>,
    /// `(original phoneme range, target phoneme range)` pairs; each original
    /// range is replaced by the frames generated for its target range.
    pub pairs: Vec<((usize, usize), (usize, usize))>,
}

impl RegenPlan {
    fn validate(&self, n_original: usize) -> Result<()> {
        let n = self.target_phonemes.len();
        if self.source_of_target.len() != n || self.target_mask.len() != n {
            return Err(invalid("regeneration plan", "per-phoneme vectors differ in length"));
        }
        for (i, (src, m)) in self.source_of_target.iter().zip(&self.target_mask).enumerate() {
            if !m && src.is_none_or(|s| s >= n_original) {
                return Err(invalid("regeneration plan", format!("unmasked target phoneme {i} has no source")));
            }
        }
        let mut last = (0, 0);
        for &((oa, ob), (ta, tb)) in &self.pairs {
            if oa > ob || ta > tb || ob > n_original || tb > n || oa < last.0 || ta < last.1 {
                return Err(invalid("regeneration plan", "pairs must be ordered, disjoint and in range"));
            }
            if (ta..tb).any(|i| !self.target_mask[i]) {
                return Err(invalid("regeneration plan", "paired target phonemes must be masked"));
            }
            last = (ob, tb);
        }
        Ok(())
    }
}

/// Result of a regeneration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegenOutput {
    /// Spliced output mel.
    pub mel: Tensor,
    /// Full-length model output over the target sequence.
    pub generated: Tensor,
    pub target_durations: Vec<usize>,
    /// Duration predictor output for every target phoneme.
    pub predicted_durations: Vec<usize>,
    /// Replaced frames of the source.
    pub mu_original: MaskSpec,
    /// Regenerated frames of the target.
    pub mu_target: MaskSpec,
    /// Each replaced source frame span with the target span that took its
    /// place, in order; insertions have empty source spans.
    pub span_pairs: Vec<((usize, usize), (usize, usize))>,
}

fn phoneme_frames(durations: &[usize], range: (usize, usize)) -> (usize, usize) {
    let start: usize = durations[..range.0].iter().sum();
    let len: usize = durations[range.0..range.1].iter().sum();
    (start, start + len)
}

/// Replaces each span of `mu` (in order) with the matching segment;
/// frames outside `mu` are copied unchanged.
pub fn splice(original: &Tensor, mu: &MaskSpec, segments: &[Tensor]) -> Result<Tensor> {
    mu.validate(original.rows())?;
    if segments.len() != mu.spans().len() {
        return Err(shape_err(
            "splice",
            format!("{} segments", mu.spans().len()),
            format!("{}", segments.len()),
        ));
    }
    let cols = original.cols();
    if let Some(bad) = segments.iter().find(|s| s.cols() != cols && s.rows() > 0) {
        return Err(shape_err("splice", format!("{cols} bins"), format!("{}", bad.cols())));
    }
    let total = original.rows() - mu.n_masked_frames() + segments.iter().map(Tensor::rows).sum::<usize>();
    let mut data = Vec::with_capacity(total * cols);
    let mut cursor = 0;
    for (&(s, e), seg) in mu.spans().iter().zip(segments) {
        data.extend_from_slice(&original.data()[cursor * cols..s * cols]);
        data.extend_from_slice(seg.data());
        cursor = e;
    }
    data.extend_from_slice(&original.data()[cursor * cols..]);
    Tensor::from_vec(total, cols, data)
}

/// Runs the masked predictors and the reverse diffusion for `plan` and
/// splices the result into the source.
pub fn regenerate(
    model: &FluentSpeech,
    sched: &DiffusionSchedule,
    src: &SourceUtterance<'_>,
    plan: &RegenPlan,
    stutter_condition: bool,
    seed: u64,
) -> Result<RegenOutput> {
    regenerate_with(model, sched, src, plan, stutter_condition, seed, false)
}

/// Regenerates the frames of `masked` phonemes in place, keeping the source
/// durations so the output stays frame-aligned with the source. Used to
/// score reconstructions against ground truth.
pub fn reconstruct(
    model: &FluentSpeech,
    sched: &DiffusionSchedule,
    src: &SourceUtterance<'_>,
    masked: &BTreeSet<usize>,
    stutter_condition: bool,
    seed: u64,
) -> Result<RegenOutput> {
    let n = src.phonemes.len();
    if let Some(&bad) = masked.iter().find(|&&p| p >= n) {
        return Err(invalid("masked phonemes", format!("phoneme {bad} out of range for {n}")));
    }
    let mut pairs = Vec::new();
    let ids: Vec<usize> = masked.iter().copied().collect();
    let mut i = 0;
    while i < ids.len() {
        let mut j = i + 1;
        while j < ids.len() && ids[j] == ids[j - 1] + 1 {
            j += 1;
        }
        pairs.push(((ids[i], ids[j - 1] + 1), (ids[i], ids[j - 1] + 1)));
        i = j;
    }
    let plan = RegenPlan {
        target_phonemes: src.phonemes.to_vec(),
        source_of_target: (0..n).map(Some).collect(),
        target_mask: (0..n).map(|p| masked.contains(&p)).collect(),
        pairs,
    };
    regenerate_with(model, sched, src, &plan, stutter_condition, seed, true)
}

/// Duration predictor output for every phoneme given the known durations
/// outside `mask`, with dropout off.
pub fn predict_durations(model: &FluentSpeech, phonemes: &[usize], known: &[usize], mask: &[bool]) -> Result<Vec<usize>> {
    model.check_phonemes(phonemes)?;
    let mut g = Graph::new(&model.params);
    let e_p = model.linguistic_encode(&mut g, phonemes)?;
    let pred = model.duration.forward(&mut g, e_p, &log_durations(known), mask)?;
    Ok(durations_from_log(g.value(pred).data()))
}

fn regenerate_with(
    model: &FluentSpeech,
    sched: &DiffusionSchedule,
    src: &SourceUtterance<'_>,
    plan: &RegenPlan,
    stutter_condition: bool,
    seed: u64,
    keep_durations: bool,
) -> Result<RegenOutput> {
    src.validate()?;
    plan.validate(src.phonemes.len())?;
    model.check_phonemes(&plan.target_phonemes)?;
    let src_durs = src.alignment.durations();
    let n_t = plan.target_phonemes.len();

    let mut g = Graph::new(&model.params);
    let e_p = model.linguistic_encode(&mut g, &plan.target_phonemes)?;
    let known: Vec<usize> = plan.source_of_target.iter().map(|s| s.map_or(0, |i| src_durs[i])).collect();
    let pred = model.duration.forward(&mut g, e_p, &log_durations(&known), &plan.target_mask)?;
    let pred = durations_from_log(g.value(pred).data());
    let durations: Vec<usize> = (0..n_t)
        .map(|i| if plan.target_mask[i] && !keep_durations { pred[i] } else { known[i] })
        .collect();

    // Target-length context: source frames for kept phonemes, blanks elsewhere.
    let n_frames: usize = durations.iter().sum();
    let mut context = Tensor::zeros(n_frames, src.mel.cols());
    let mut f0 = vec![0.0; n_frames];
    let mut frame_mask = vec![false; n_frames];
    let mut cursor = 0;
    for i in 0..n_t {
        let d = durations[i];
        if plan.target_mask[i] {
            frame_mask[cursor..cursor + d].fill(true);
        } else {
            let (s, _) = src.alignment.span(plan.source_of_target[i].expect("validated"));
            for k in 0..d {
                context.row_mut(cursor + k).copy_from_slice(src.mel.row(s + k));
                f0[cursor + k] = src.f0[s + k];
            }
        }
        cursor += d;
    }

    let e_t = model.text_frames(&mut g, e_p, &durations)?;
    let pitch = model.pitch.forward(&mut g, e_t, &log_pitch(&f0), &frame_mask)?;
    let pitch = pitch_from_log(g.value(pitch).data(), MIN_VOICED_HZ);
    for (f, m) in frame_mask.iter().enumerate() {
        if *m {
            f0[f] = pitch[f];
        }
    }
    let masked = model.masked_mel(&mut g, &context, &frame_mask)?;
    let e_x = model.acoustic.forward(&mut g, masked);
    let labels = stutter_condition.then(|| vec![0u8; n_frames]);
    let c = model.condition.build(&mut g, e_t, e_x, src.speaker, &f0, labels.as_deref())?;
    let condition = g.value(c).clone();
    drop(g);

    let generated = sched.denoise_loop(
        (n_frames, model.config.n_mels),
        &condition,
        |x_t, t, c| {
            let mut g = Graph::new(&model.params);
            let x = g.constant(x_t.clone());
            let c = g.constant(c.clone());
            let y = model.denoiser.forward(&mut g, x, t, c)?;
            Ok(g.value(y).clone())
        },
        seed,
    )?;

    let mut orig_spans = Vec::with_capacity(plan.pairs.len());
    let mut segments = Vec::with_capacity(plan.pairs.len());
    let mut target_spans = Vec::with_capacity(plan.pairs.len());
    for &(orange, trange) in &plan.pairs {
        let (os, oe) = phoneme_frames(&src_durs, orange);
        let (ts, te) = phoneme_frames(&durations, trange);
        orig_spans.push((os, oe));
        target_spans.push((ts, te));
        segments.push(generated.slice_rows(ts, te));
    }
    // Zero-width original spans (pure insertions) must stay distinct, so the
    // splice walks them directly rather than through a merged MaskSpec.
    let mel = splice_pairs(src.mel, &orig_spans, &segments)?;
    let mu_original = MaskSpec::from_spans(
        orig_spans.iter().copied(),
        plan.pairs.iter().flat_map(|&((a, b), _)| a..b).collect(),
    );
    let mu_target = MaskSpec::from_spans(
        target_spans.iter().copied(),
        (0..n_t).filter(|&i| plan.target_mask[i]).collect(),
    );
    Ok(RegenOutput {
        mel,
        generated,
        target_durations: durations,
        predicted_durations: pred,
        mu_original,
        mu_target,
        span_pairs: orig_spans.into_iter().zip(target_spans).collect(),
    })
}

/// Like [`splice`] but over ordered, possibly empty, non-overlapping spans.
pub fn splice_pairs(original: &Tensor, spans: &[(usize, usize)], segments: &[Tensor]) -> Result<Tensor> {
    if spans.len() != segments.len() {
        return Err(shape_err("splice", format!("{} segments", spans.len()), format!("{}", segments.len())));
    }
    let cols = original.cols();
    let mut data = Vec::new();
    let mut cursor = 0;
    for (&(s, e), seg) in spans.iter().zip(segments) {
        if s < cursor || e < s || e > original.rows() {
            return Err(invalid("splice", "spans must be ordered and inside the source"));
        }
        if seg.rows() > 0 && seg.cols() != cols {
            return Err(shape_err("splice", format!("{cols} bins"), format!("{}", seg.cols())));
        }
        data.extend_from_slice(&original.data()[cursor * cols..s * cols]);
        data.extend_from_slice(seg.data());
        cursor = e;
    }
    data.extend_from_slice(&original.data()[cursor * cols..]);
    let rows = data.len() / cols.max(1);
    Tensor::from_vec(rows, cols, data)
}

/// Word index of each target phoneme after an edit. New phonemes join the
/// surrounding word when the edit sits strictly inside one; otherwise they
/// form a word of their own.
pub fn target_words(req: &EditRequest, original_words: &[usize]) -> Result<Vec<usize>> {
    let (a, b) = req.original_range()?;
    let (ta, te) = req.edit_region;
    let mut raw: Vec<(bool, usize)> = Vec::with_capacity(req.target_phonemes.len());
    raw.extend(original_words[..a].iter().map(|&w| (false, w)));
    let inside = a > 0 && b < original_words.len() && original_words[a - 1] == original_words[b];
    for _ in ta..te {
        raw.push(if inside { (false, original_words[b]) } else { (true, 0) });
    }
    raw.extend(original_words[b..].iter().map(|&w| (false, w)));
    // Renumber into consecutive indices.
    let mut out = Vec::with_capacity(raw.len());
    let mut prev: Option<(bool, usize)> = None;
    let mut next = 0usize;
    for r in raw {
        if let Some(p) = prev {
            if p != r {
                next += 1;
            }
        }
        out.push(next);
        prev = Some(r);
    }
    Ok(out)
}

/// Plans an edit: the edit region plus one adjacent word (the following one,
/// or the preceding one at the end of the utterance) is regenerated.
pub fn plan_edit(req: &EditRequest, original_words: &[usize]) -> Result<RegenPlan> {
    let (a, b) = req.original_range()?;
    let (ta, te) = req.edit_region;
    let n_t = req.target_phonemes.len();
    if original_words.len() != req.original_phonemes.len() {
        return Err(shape_err(
            "plan_edit",
            format!("{} word indices", req.original_phonemes.len()),
            format!("{}", original_words.len()),
        ));
    }
    let words = target_words(req, original_words)?;
    let mut lo = ta;
    let mut hi = te;
    if te < n_t {
        let w = words[te];
        while hi < n_t && words[hi] == w {
            hi += 1;
        }
    } else if ta > 0 {
        let w = words[ta - 1];
        while lo > 0 && words[lo - 1] == w {
            lo -= 1;
        }
    }
    let shift = |i: usize| if i < ta { i } else { i - te + b };
    let source_of_target = (0..n_t)
        .map(|i| if (ta..te).contains(&i) { None } else { Some(shift(i)) })
        .collect();
    let target_mask = (0..n_t).map(|i| (lo..hi).contains(&i)).collect();
    let (oa, ob) = (if lo < ta { shift(lo) } else { a }, if hi > te { shift(hi - 1) + 1 } else { b });
    Ok(RegenPlan {
        target_phonemes: req.target_phonemes.clone(),
        source_of_target,
        target_mask,
        pairs: vec![((oa, ob), (lo, hi))],
    })
}

/// Text-based edit. An identity request returns the source mel unchanged
/// without running the model.
pub fn edit(
    model: &FluentSpeech,
    sched: &DiffusionSchedule,
    src: &SourceUtterance<'_>,
    req: &EditRequest,
    stutter_condition: bool,
    seed: u64,
) -> Result<RegenOutput> {
    src.validate()?;
    if req.original_phonemes != src.phonemes {
        return Err(invalid("edit request", "original phonemes differ from the utterance"));
    }
    if req.is_identity() {
        return Ok(identity_output(src));
    }
    let plan = plan_edit(req, src.alignment.word_of_phoneme())?;
    regenerate(model, sched, src, &plan, stutter_condition, seed)
}

fn identity_output(src: &SourceUtterance<'_>) -> RegenOutput {
    RegenOutput {
        mel: src.mel.clone(),
        generated: Tensor::zeros(0, src.mel.cols()),
        target_durations: src.alignment.durations(),
        predicted_durations: src.alignment.durations(),
        mu_original: MaskSpec::empty(),
        mu_target: MaskSpec::empty(),
        span_pairs: Vec::new(),
    }
}

/// Per-frame stutter probability of the source.
pub fn stutter_probabilities(model: &FluentSpeech, src: &SourceUtterance<'_>) -> Result<Vec<f64>> {
    src.validate()?;
    let mut g = Graph::new(&model.params);
    let e_p = model.linguistic_encode(&mut g, src.phonemes)?;
    let e_t = model.text_frames(&mut g, e_p, &src.alignment.durations())?;
    let mel = g.constant(src.mel.clone());
    let e_x = model.acoustic.forward(&mut g, mel);
    let probs = model.stutter.forward(&mut g, e_t, e_x)?;
    let p = g.value(probs);
    Ok((0..p.rows()).map(|r| p.get(r, 1)).collect())
}

/// Frames whose probability reaches the threshold, merged into spans.
pub fn detect_region(probs: &[f64], threshold: f64) -> MaskSpec {
    let flags: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
    MaskSpec::from_frame_flags(&flags)
}

/// Phonemes with at least [`REMOVAL_COVERAGE`] of their frames in `mu_prime`.
pub fn removable_phonemes(mu_prime: &MaskSpec, alignment: &Alignment) -> BTreeSet<usize> {
    let flags = mu_prime.frame_flags(alignment.n_frames());
    alignment
        .spans()
        .iter()
        .enumerate()
        .filter(|(_, &(s, e))| {
            e > s && flags[s..e].iter().filter(|&&f| f).count() as f64 >= REMOVAL_COVERAGE * (e - s) as f64
        })
        .map(|(i, _)| i)
        .collect()
}

/// Plans stutter removal: removable phonemes are dropped, and what remains
/// of the expanded region is regenerated.
pub fn plan_stutter_removal(mu_prime: &MaskSpec, alignment: &Alignment, phonemes: &[usize]) -> RegenPlan {
    let mu = expand_stutter_region(mu_prime, alignment);
    let removed = removable_phonemes(mu_prime, alignment);
    let regen = mu.overlapping_phonemes(alignment);
    let mut target_phonemes = Vec::new();
    let mut source_of_target = Vec::new();
    let mut target_mask = Vec::new();
    let mut new_index = vec![usize::MAX; phonemes.len()];
    for (i, &p) in phonemes.iter().enumerate() {
        if removed.contains(&i) {
            continue;
        }
        new_index[i] = target_phonemes.len();
        target_phonemes.push(p);
        source_of_target.push(Some(i));
        target_mask.push(regen.contains(&i));
    }
    let mut pairs = Vec::new();
    for &(s, e) in mu.spans() {
        let owners: Vec<usize> = (0..alignment.n_phonemes())
            .filter(|&i| {
                let (ps, pe) = alignment.span(i);
                ps < e && s < pe
            })
            .collect();
        let (Some(&first), Some(&last)) = (owners.first(), owners.last()) else { continue };
        let kept: Vec<usize> = owners.iter().filter(|i| !removed.contains(i)).map(|&i| new_index[i]).collect();
        let trange = match (kept.first(), kept.last()) {
            (Some(&a), Some(&b)) => (a, b + 1),
            _ => {
                // Every phoneme in the span is removed: nothing is generated.
                let at = (0..first).rev().find(|i| !removed.contains(i)).map_or(0, |i| new_index[i] + 1);
                (at, at)
            }
        };
        pairs.push(((first, last + 1), trange));
    }
    RegenPlan {
        target_phonemes,
        source_of_target,
        target_mask,
        pairs,
    }
}

/// Result of [`remove_stutter`].
#[derive(Debug, Clone, PartialEq)]
pub struct StutterRemoval {
    pub output: RegenOutput,
    pub probabilities: Vec<f64>,
    /// Frames detected as stutter (μ′).
    pub detected: MaskSpec,
    pub removed_phonemes: BTreeSet<usize>,
}

/// Detects stutters and regenerates the expanded region with the fluent
/// stutter embedding on every frame.
pub fn remove_stutter(
    model: &FluentSpeech,
    sched: &DiffusionSchedule,
    src: &SourceUtterance<'_>,
    threshold: f64,
    seed: u64,
) -> Result<StutterRemoval> {
    let probabilities = stutter_probabilities(model, src)?;
    let detected = detect_region(&probabilities, threshold);
    if detected.is_empty() {
        return Ok(StutterRemoval {
            output: identity_output(src),
            probabilities,
            detected,
            removed_phonemes: BTreeSet::new(),
        });
    }
    let removed_phonemes = removable_phonemes(&detected, src.alignment);
    let plan = plan_stutter_removal(&detected, src.alignment, src.phonemes);
    let output = regenerate(model, sched, src, &plan, true, seed)?;
    Ok(StutterRemoval {
        output,
        probabilities,
        detected,
        removed_phonemes,
    })
}

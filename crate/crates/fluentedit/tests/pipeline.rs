mod common;

use fluentedit::io::{Manifest, Utterance};
use fluentedit::pipeline::{compare, Engine};
use fluentedit::training::load_corpus;
use fluentedit_core::{AudioConfig, FluentSpeech, MaskSpec, MelNormalizer, Vocabulary};
use proptest::prelude::*;

fn setup(dir: &std::path::Path) -> (Engine, Vec<Utterance>) {
    let m = common::corpus(dir, 8, 1.0, 6);
    let audio = AudioConfig::default();
    let utts = load_corpus(&Manifest::read(&m).unwrap(), &Vocabulary::default(), &audio).unwrap();
    let normalizer = MelNormalizer::fit(utts.iter().map(|u| &u.mel)).unwrap();
    let model = FluentSpeech::new(common::small_config(), 4).unwrap();
    let engine = Engine::from_parts(model, normalizer, audio, Vocabulary::default(), true, 4).unwrap();
    (engine, utts)
}

/// Frames outside the regenerated spans, in order.
fn kept(mu: &MaskSpec, rows: usize) -> Vec<usize> {
    (0..rows).filter(|&f| !mu.contains(f)).collect()
}

#[test]
fn identity_edit_returns_input_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, utts) = setup(dir.path());
    for u in &utts[..3] {
        let r = engine.edit(u, (2, 2), &[], 1).unwrap();
        assert_eq!(r.mel, u.mel);
        assert_eq!(r.wave, u.wave);
    }
}

#[test]
fn replace_and_delete_keep_outside_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, utts) = setup(dir.path());
    let u = &utts[0];
    let n_ph = u.phonemes.len();
    for (region, text) in [((1, 2), vec!["T05", "T06"]), ((2, 3), vec![]), ((1, 1), vec!["T09"])] {
        let text: Vec<String> = text.into_iter().map(String::from).collect();
        let r = engine.edit(u, region, &text, 7).unwrap();
        let (src, out) = (kept(&r.regen.mu_original, u.mel.rows()), kept(&r.regen.mu_target, r.mel.rows()));
        assert_eq!(src.len(), out.len());
        for (&s, &o) in src.iter().zip(&out) {
            assert_eq!(r.mel.row(o), u.mel.row(s));
        }
        // Frame-count bookkeeping from the alignment.
        let removed: usize = r.regen.span_pairs.iter().map(|&((a, b), _)| b - a).sum();
        let added: usize = r.regen.span_pairs.iter().map(|&(_, (a, b))| b - a).sum();
        assert_eq!(r.mel.rows(), u.mel.rows() - removed + added);
        assert_eq!(r.regen.target_durations.len(), n_ph - (region.1 - region.0) + text.len());
        assert_eq!(r.regen.target_durations.iter().sum::<usize>(), r.mel.rows());
        assert!(r.wave.len().abs_diff(r.mel.rows() * 256) <= 1024);
        let again = engine.edit(u, region, &text, 7).unwrap();
        assert_eq!(again.mel, r.mel);
        assert_eq!(again.wave, r.wave);
    }
    assert!(engine.edit(u, (3, n_ph + 1), &[], 0).is_err());
    assert!(engine.edit(u, (1, 2), &["XYZ".to_string()], 0).is_err());
}

#[test]
fn threshold_above_one_is_identity_and_detection_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, utts) = setup(dir.path());
    for u in &utts[..3] {
        let (r, removal) = engine.remove_stutter(u, 1.0 + 1e-9, 2).unwrap();
        assert!(removal.detected.is_empty());
        assert_eq!(r.mel, u.mel);
        assert_eq!(r.wave, u.wave);
        // Everything is detected at threshold 0; removed fillers shorten the output.
        let (r0, all) = engine.remove_stutter(u, 0.0, 2).unwrap();
        assert_eq!(all.detected.n_masked_frames(), u.mel.rows());
        if !all.removed_phonemes.is_empty() {
            assert!(r0.regen.target_durations.len() < u.phonemes.len());
        }
    }
}

#[test]
fn self_comparison_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, utts) = setup(dir.path());
    let rep = compare(&utts, &utts, &engine.audio).unwrap();
    assert_eq!(rep.aggregate.mcd_db, Some(0.0));
    assert_eq!(rep.aggregate.duration_mse, Some(0.0));
    assert_eq!(rep.aggregate.pitch_mse, Some(0.0));
    let s = rep.aggregate.stutter.unwrap();
    assert_eq!((s.accuracy, s.precision), (1.0, 1.0));
    assert!(rep.aggregate.stoi.unwrap() >= 0.99);
    assert!(compare(&utts[..2], &utts[2..4], &engine.audio).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_replacements_keep_outside_frames(seed in 0u64..1000, which in 0usize..8, start in 0usize..6, len in 0usize..3, add in 0usize..3) {
        let dir = tempfile::tempdir().unwrap();
        let (engine, utts) = setup(dir.path());
        let u = &utts[which];
        let a = start.min(u.phonemes.len());
        let b = (a + len).min(u.phonemes.len());
        let text: Vec<String> = (0..add).map(|i| format!("T{:02}", (seed as usize + i) % 24)).collect();
        let r = engine.edit(u, (a, b), &text, seed).unwrap();
        let (src, out) = (kept(&r.regen.mu_original, u.mel.rows()), kept(&r.regen.mu_target, r.mel.rows()));
        prop_assert_eq!(src.len(), out.len());
        for (&s, &o) in src.iter().zip(&out) {
            prop_assert_eq!(r.mel.row(o), u.mel.row(s));
        }
    }
}

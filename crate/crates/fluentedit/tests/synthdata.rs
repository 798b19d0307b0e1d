mod common;

use std::collections::BTreeMap;
use std::path::Path;

use fluentedit::io::{Manifest, StutterType};
use fluentedit::synthdata::{synthesize_utterance, Sound, SynthConfig};
use fluentedit::training::load_corpus;
use fluentedit_core::{AudioConfig, Vocabulary};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_corpus() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    common::corpus(a.path(), 12, 0.5, 9);
    common::corpus(b.path(), 12, 0.5, 9);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 12 * 3 + 2);
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    common::corpus(c.path(), 12, 0.5, 10);
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn stutter_fraction_matches_the_rate() {
    let cfg = SynthConfig { stutter_rate: 0.5, ..SynthConfig::default() };
    let audio = AudioConfig::default();
    let hits = (0..200).filter(|&i| !synthesize_utterance(&cfg, &audio, i).stutters.is_empty()).count();
    let frac = hits as f64 / 200.0;
    assert!((frac - 0.5).abs() <= 0.07, "fraction {frac}");
}

#[test]
fn durations_sum_to_the_mel_frames() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(dir.path(), 30, 0.5, 4);
    let utts = load_corpus(&Manifest::read(&m).unwrap(), &Vocabulary::default(), &AudioConfig::default()).unwrap();
    let cfg = SynthConfig { n_utterances: 30, stutter_rate: 0.5, seed: 4, ..SynthConfig::default() };
    for (i, u) in utts.iter().enumerate() {
        let s = synthesize_utterance(&cfg, &AudioConfig::default(), i);
        assert_eq!(u.alignment.durations().iter().sum::<usize>(), u.mel.rows());
        assert_eq!(u.alignment.durations(), s.durations);
        assert_eq!(u.stutter.clone().unwrap(), s.stutter_frame_labels());
    }
}

/// Recomputes every duration from the rule: `round(tempo · (3 + (7c mod 5)
/// + (5p mod 4) − 1))`, floor 2, plus `round(3 · tempo)` for fillers.
#[test]
fn durations_follow_the_context_rule() {
    let cfg = SynthConfig::default();
    let v = cfg.vocab_size;
    let class = |s: Sound| match s {
        Sound::Tone(t) => t,
        Sound::Silence => v,
        Sound::Filler => v + 1,
    };
    for i in 0..40 {
        let u = synthesize_utterance(&cfg, &AudioConfig::default(), i);
        for (k, (&s, &d)) in u.sounds.iter().zip(&u.durations).enumerate() {
            let prev = if k == 0 { Sound::Silence } else { u.sounds[k - 1] };
            let raw = u.tempo * ((3 + (class(s) * 7) % 5) as f64 + ((class(prev) * 5) % 4) as f64 - 1.0);
            let mut expect = (raw.round() as usize).max(2);
            if s == Sound::Filler {
                expect += (3.0 * u.tempo).round() as usize;
            }
            assert_eq!(d, expect, "utterance {i} phoneme {k}");
        }
    }
}

#[test]
fn stutter_labels_mark_the_injected_word() {
    let cfg = SynthConfig { stutter_rate: 1.0, ..SynthConfig::default() };
    let audio = AudioConfig::default();
    for i in 0..30 {
        let u = synthesize_utterance(&cfg, &audio, i);
        assert_eq!(u.stutters.len(), 1);
        let ((s, e), kind) = u.stutters[0];
        let al = u.alignment();
        let p = (0..u.sounds.len()).find(|&p| al.span(p).0 == s).unwrap();
        assert_eq!(al.span(p), (s, e));
        match kind {
            StutterType::Filler => assert_eq!(u.sounds[p], Sound::Filler),
            StutterType::Repetition => assert_eq!(u.sounds[p], u.sounds[p + 1]),
            StutterType::Other => unreachable!(),
        }
        let words = &u.words;
        assert!(words[p - 1] != words[p] && words[p] != words[p + 1], "stutter is its own word");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SynthConfig { stutter_rate: 1.5, ..SynthConfig::default() },
        SynthConfig { n_utterances: 0, ..SynthConfig::default() },
        SynthConfig { vocab_size: 99, ..SynthConfig::default() },
        SynthConfig { min_words: 5, max_words: 2, ..SynthConfig::default() },
    ] {
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }
}

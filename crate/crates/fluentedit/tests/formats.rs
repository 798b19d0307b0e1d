mod common;

use fluentedit::checkpoint::{sidecar_path, Checkpoint, CheckpointMeta, FORMAT_VERSION};
use fluentedit::dsp::Waveform;
use fluentedit::error::AppError;
use fluentedit::io::{
    frame_spans_to_stutter, quantize, read_npy, read_wav, stutter_frames, write_npy, write_wav, AlignmentFile, Manifest,
    StutterSpan, StutterType,
};
use fluentedit_core::optim::AdamState;
use fluentedit_core::train::TrainConfig;
use fluentedit_core::{Alignment, AudioConfig, FluentSpeech, MelNormalizer, Tensor, Vocabulary};
use proptest::prelude::*;

#[test]
fn wav_round_trip_is_exact_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let w = Waveform::new((0..500).map(|i| ((i as f64) * 0.05).sin() * 0.8).collect(), 22050);
    write_wav(&p, &w).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.sample_rate, 22050);
    for (a, b) in w.samples.iter().zip(&back.samples) {
        assert_eq!(quantize(*a), quantize(*b));
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
    write_wav(dir.path().join("b.wav"), &back).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(dir.path().join("b.wav")).unwrap());
}

#[test]
fn unsupported_wavs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stereo.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 22050, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    for _ in 0..20 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    assert!(matches!(read_wav(&p), Err(AppError::Format { .. })));
    let q = dir.path().join("float.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 22050, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(&q, spec).unwrap();
    w.write_sample(0.5f32).unwrap();
    w.finalize().unwrap();
    assert!(read_wav(&q).is_err());
    let missing = read_wav(dir.path().join("none.wav")).unwrap_err();
    assert_eq!(missing.exit_code(), 2);
}

#[test]
fn npy_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::from_vec(3, 4, vec![0.1, -2.5, 1e-300, f64::MAX, 3.0, 0.0, -0.0, 7.25, 1.0 / 3.0, 2.0, 4.0, 5.0]).unwrap();
    let p = dir.path().join("m.npy");
    write_npy(&p, &t).unwrap();
    let back = read_npy(&p).unwrap();
    assert_eq!(back.shape(), (3, 4));
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = FluentSpeech::new(common::small_config(), 3).unwrap();
    let mut opt = AdamState::new(&model.params);
    opt.step = 17;
    for (i, t) in opt.m.iter_mut().chain(opt.v.iter_mut()).enumerate() {
        for (j, v) in t.data_mut().iter_mut().enumerate() {
            *v = ((i * 31 + j) as f64 * 0.123).sin() / 7.0;
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        step: 17,
        model: model.config.clone(),
        audio: AudioConfig::default(),
        normalizer: MelNormalizer { mean: (0..80).map(|i| -5.0 + i as f64 / 9.0).collect(), std: 2.0f64.sqrt() },
        vocabulary: Vocabulary::default(),
        train: TrainConfig::default(),
        has_optimizer: true,
    };
    let ck = Checkpoint { meta: meta.clone(), model: model.clone(), optimizer: Some(opt.clone()) };
    let p = dir.path().join("c.ckpt");
    ck.save(&p).unwrap();
    assert!(sidecar_path(&p).exists());
    let back = Checkpoint::load(&p).unwrap();
    assert_eq!(back.meta, meta);
    assert!(back.model.params == model.params);
    assert_eq!(back.optimizer.unwrap(), opt);

    let bare = Checkpoint { meta, model, optimizer: None };
    let q = dir.path().join("bare.ckpt");
    bare.save(&q).unwrap();
    let back = Checkpoint::load(&q).unwrap();
    assert!(back.optimizer.is_none() && !back.meta.has_optimizer);

    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] = b'X';
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(Checkpoint::load(&p), Err(AppError::Format { .. })));
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    let e = Manifest::read(&empty).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 3}\n").unwrap();
    assert!(Manifest::read(&bad).is_err());
    assert_eq!(Manifest::read(dir.path().join("missing.jsonl")).unwrap_err().exit_code(), 2);
    let m = common::corpus(&dir.path().join("c"), 3, 0.0, 1);
    let man = Manifest::read(&m).unwrap();
    assert_eq!(man.entries.len(), 3);
    assert!(man.find("utt00002").is_ok());
    assert!(man.find("utt00009").is_err());
}

#[test]
fn alignment_file_round_trip() {
    let cfg = AudioConfig::default();
    let al = Alignment::from_durations(&[4, 7, 2, 9], vec![0, 1, 1, 2]).unwrap();
    let symbols: Vec<String> = ["sil", "T01", "T02", "sil"].iter().map(|s| s.to_string()).collect();
    let f = AlignmentFile::from_alignment(symbols, &al, &cfg);
    assert_eq!(f.to_alignment(22, &cfg).unwrap(), al);
    assert!(f.to_alignment(30, &cfg).is_err());
}

proptest! {
    #[test]
    fn stutter_spans_round_trip_through_seconds(a in 0usize..40, len in 1usize..20, tail in 0usize..10) {
        let cfg = AudioConfig::default();
        let n = a + len + tail;
        let spans = frame_spans_to_stutter(&[(a, a + len)], StutterType::Filler, &cfg);
        let labels = stutter_frames(&spans, n, &cfg).unwrap();
        let expect: Vec<u8> = (0..n).map(|f| u8::from((a..a + len).contains(&f))).collect();
        prop_assert_eq!(labels, expect);
        let json = serde_json::to_string(&spans).unwrap();
        let back: Vec<StutterSpan> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, spans);
    }
}

mod common;

use fluentedit::checkpoint::Checkpoint;
use fluentedit::io::Manifest;
use fluentedit::training::{load_corpus, run_training, run_training_on, TrainOptions};
use fluentedit_core::optim::AdamConfig;
use fluentedit_core::train::TrainConfig;
use fluentedit_core::{AudioConfig, Vocabulary};

fn options(steps: u64) -> TrainOptions {
    TrainOptions {
        model: common::small_config(),
        train: TrainConfig {
            max_steps: steps,
            batch_size: 2,
            seed: 5,
            stutter_enabled: true,
            adam: AdamConfig { learning_rate: 1e-3, warmup_steps: 2, ..AdamConfig::default() },
            ..TrainConfig::default()
        },
        audio: AudioConfig::default(),
        init_seed: 1,
        checkpoint_every: 3,
        log_every: 1,
        resume: None,
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(&dir.path().join("data"), 6, 0.5, 2);
    let utts = load_corpus(&Manifest::read(&m).unwrap(), &Vocabulary::default(), &AudioConfig::default()).unwrap();
    let straight = run_training_on(&utts, &options(6), dir.path().join("a")).unwrap();
    assert_eq!(straight.reports.len(), 6);
    let mid = dir.path().join("a/step_000003.ckpt");
    assert!(mid.exists());
    let resumed = run_training_on(&utts, &TrainOptions { resume: Some(mid), ..options(6) }, dir.path().join("b")).unwrap();
    assert_eq!(resumed.reports.len(), 3);
    assert_eq!(resumed.reports[..], straight.reports[3..]);
    assert!(resumed.model.params == straight.model.params);
    let a = Checkpoint::load(dir.path().join("a/latest.ckpt")).unwrap();
    let b = Checkpoint::load(dir.path().join("b/latest.ckpt")).unwrap();
    assert_eq!(a.optimizer, b.optimizer);
    assert_eq!(a.meta, b.meta);
    let log = std::fs::read_to_string(dir.path().join("a/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::corpus(&dir.path().join("data"), 4, 0.5, 3);
    let a = run_training(&m, &options(3), dir.path().join("a")).unwrap();
    let b = run_training(&m, &options(3), dir.path().join("b")).unwrap();
    assert_eq!(a.reports, b.reports);
    assert!(a.model.params == b.model.params);
    assert!(a.reports.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn bad_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(run_training(&empty, &options(2), dir.path().join("o")).unwrap_err().exit_code(), 1);
    assert_eq!(run_training_on(&[], &options(2), dir.path().join("o")).unwrap_err().exit_code(), 1);

    let m = common::corpus(&dir.path().join("data"), 4, 0.0, 3);
    let mut few = options(2);
    few.model.n_speakers = 1;
    let utts = load_corpus(&Manifest::read(&m).unwrap(), &Vocabulary::default(), &AudioConfig::default()).unwrap();
    if utts.iter().any(|u| u.speaker > 0) {
        assert_eq!(run_training_on(&utts, &few, dir.path().join("o")).unwrap_err().exit_code(), 1);
    }
    let mut zero = options(2);
    zero.train.batch_size = 0;
    assert_eq!(run_training(&m, &zero, dir.path().join("o")).unwrap_err().exit_code(), 1);

    let no_opt = dir.path().join("o2");
    run_training(&m, &options(1), &no_opt).unwrap();
    let mut ck = Checkpoint::load(no_opt.join("latest.ckpt")).unwrap();
    ck.optimizer = None;
    ck.save(no_opt.join("bare.ckpt")).unwrap();
    let resume = TrainOptions { resume: Some(no_opt.join("bare.ckpt")), ..options(2) };
    assert!(run_training(&m, &resume, dir.path().join("o3")).is_err());
}

//! Synthetic data, training, probing and cross-validation end to end at
//! small scale, plus CLI exit codes.

use std::process::Command;

use autotransfer::autotransfer::{cross_validate, fold_rotation, CvOptions};
use autotransfer::censoring::{CensorConfig, CensorMethod, CensorMode};
use autotransfer::data::{loso_split, save_dataset, synth_generate, SynthConfig, TrialMeta, TrialSet};
use autotransfer::numerics::Mat;
use autotransfer::training::{balanced_accuracy, subject_probe, train, ProbeSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn unskewed_labels_are_binomial() {
    let cfg = SynthConfig { label_skew: 0.0, trials_per_subject: 400, seed: 5, ..SynthConfig::default() };
    let ts = synth_generate(&cfg).unwrap();
    // class 0 count per subject ~ Binomial(400, 1/2): sd 10
    for m in 0..cfg.n_subjects {
        let n0 = (0..ts.len()).filter(|&i| ts.s[i] == m && ts.y[i] == 0).count() as f64;
        assert!((n0 - 200.0).abs() <= 4.0 * 10.0, "subject {m}: {n0}");
    }
    let total0 = ts.y.iter().filter(|&&c| c == 0).count() as f64;
    assert!((total0 - 1200.0).abs() <= 4.0 * (2400.0f64 * 0.25).sqrt());
}

#[test]
fn skewed_prior_tilts_toward_subject_class() {
    let cfg = SynthConfig { label_skew: 0.6, trials_per_subject: 400, seed: 6, ..SynthConfig::default() };
    let ts = synth_generate(&cfg).unwrap();
    for m in 0..cfg.n_subjects {
        let favoured = m % cfg.n_classes;
        let n = (0..ts.len()).filter(|&i| ts.s[i] == m && ts.y[i] == favoured).count() as f64;
        // expected 0.2 + 0.6 = 0.8 of 400
        assert!((n - 320.0).abs() <= 4.0 * (400.0f64 * 0.16).sqrt(), "subject {m}: {n}");
    }
}

#[test]
fn subjects_are_learnable_from_raw_features() {
    let ts = synth_generate(&SynthConfig::default()).unwrap();
    let (tr, _, _) = loso_split(&ts, 1, 0).unwrap();
    let acc = subject_probe(&tr.x, &tr.s, &ProbeSpec::default(), 0).unwrap();
    assert!(acc >= 0.6, "raw-feature subject probe {acc}");
}

#[test]
fn probe_on_noise_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = Mat::from_fn(800, 8, |_, _| StandardNormal.sample(&mut rng));
    let s: Vec<usize> = (0..800).map(|i| i % 4).collect();
    let acc = subject_probe(&z, &s, &ProbeSpec::default(), 1).unwrap();
    // 160 held-out points, chance 0.25, sd about 0.034
    assert!((acc - 0.25).abs() <= 0.12, "noise probe {acc}");
}

fn separable(seed: u64) -> TrialSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 240;
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let s: Vec<usize> = (0..n).map(|i| (i / 2) % 4).collect();
    let x = Mat::from_fn(n, 4, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        0.3 * e + if j == 0 { 4.0 * y[i] as f64 - 2.0 } else { 0.0 }
    });
    let meta = TrialMeta {
        channels: 1,
        samples_per_channel: 4,
        class_names: vec!["0".into(), "1".into()],
        subject_names: (1..=4).map(|m| m.to_string()).collect(),
        source: "separable".into(),
    };
    TrialSet::new(x, y, s, meta).unwrap()
}

#[test]
fn zero_lambda_fits_separable_data() {
    let ts = separable(4);
    let (tr, va, te) = loso_split(&ts, 1, 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 40,
        censor: CensorConfig::new(CensorMethod::Adversarial, CensorMode::Marginal, 0.0),
        ..TrainConfig::default()
    };
    let res = train(&tr, &va, &cfg).unwrap();
    let acc = balanced_accuracy(&te.y, &res.best.predict(&te.x).unwrap()).unwrap();
    assert!(acc >= 0.99, "test balanced accuracy {acc}");
}

fn small_synth() -> TrialSet {
    synth_generate(&SynthConfig { n_subjects: 4, trials_per_subject: 60, ..SynthConfig::default() }).unwrap()
}

#[test]
fn rotation_tests_every_subject_once() {
    let ts = small_synth();
    let folds = fold_rotation(&ts);
    assert_eq!(folds, vec![(1, 0), (2, 1), (3, 2), (0, 3)]);
}

#[test]
fn cross_validation_is_reproducible_and_baseline_is_stable() {
    let ts = small_synth();
    let base = TrainConfig { max_epochs: 4, ..TrainConfig::default() };
    let mmd = CensorConfig::new(CensorMethod::Mmd, CensorMode::Marginal, 1.0);
    let adv = CensorConfig::new(CensorMethod::Adversarial, CensorMode::Conditional, 0.1);
    let opts = CvOptions::default();
    let a = cross_validate(&ts, &[mmd.clone()], &base, 9, &opts).unwrap();
    let b = cross_validate(&ts, &[mmd], &base, 9, &opts).unwrap();
    let c = cross_validate(&ts, &[adv], &base, 9, &opts).unwrap();
    assert!(a.same_scores(&b));
    assert_eq!(a.entries.len(), 2);
    assert!(a.entries[0].is_baseline() && c.entries[0].is_baseline());
    assert_eq!(a.entries[0].val_scores(), c.entries[0].val_scores());
    assert_eq!(a.entries[0].test_scores(), c.entries[0].test_scores());
    for e in &a.entries {
        assert_eq!(e.folds.len(), 4);
        for f in &e.folds {
            assert_ne!(f.val_subject, f.test_subject);
            assert!((0.0..=1.0).contains(&f.test_bal_acc));
        }
    }
}

#[test]
fn every_engine_and_mode_trains() {
    let ts = small_synth();
    let (tr, va, _) = loso_split(&ts, 1, 0).unwrap();
    for method in [CensorMethod::Adversarial, CensorMethod::Mige, CensorMethod::Mmd, CensorMethod::PairMmd, CensorMethod::Began] {
        for mode in CensorMode::ALL {
            let cfg = TrainConfig { max_epochs: 2, censor: CensorConfig::new(method, mode, 0.1), ..TrainConfig::default() };
            let res = train(&tr, &va, &cfg).unwrap_or_else(|e| panic!("{method}/{mode}: {e}"));
            assert_eq!(res.history.len(), 2);
            assert!(res.history.iter().all(|r| r.task_loss.is_finite() && r.val_loss.is_finite()));
        }
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autotransfer"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    save_dataset(&small_synth(), &data).unwrap();
    let out = dir.path().join("run");

    let ok = cli()
        .args(["train", "--val", "2", "--test", "1", "--epochs", "2", "--method", "mmd", "--lambda", "1"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    for f in ["metrics.jsonl", "checkpoint.json", "train_summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let lines = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[train]\nmax_epochs = \"many\"\n").unwrap();
    let code = |args: &[&str]| cli().args(args).output().unwrap().status.code();
    let data_s = data.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&["train", "--config", bad_config.to_str().unwrap(), "--data", data_s, "--val", "2", "--test", "1", "--out", out_s]), Some(2));
    assert_eq!(code(&["train", "--data", data_s, "--val", "2", "--test", "1", "--out", out_s, "--lambda=-1"]), Some(2));
    assert_eq!(code(&["train", "--data", data_s, "--val", "9", "--test", "1", "--out", out_s]), Some(2));
    assert_eq!(code(&["train", "--data", "/nonexistent/d.csv", "--val", "2", "--test", "1", "--out", out_s]), Some(3));

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "subject,label,f0\n1,0,0.5\n2,1,abc\n").unwrap();
    assert_eq!(code(&["train", "--data", broken.to_str().unwrap(), "--val", "2", "--test", "1", "--out", out_s]), Some(3));
}

#[test]
fn cli_config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.bin");
    save_dataset(&small_synth(), &data).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("[data]\npath = {:?}\n\n[train]\nmax_epochs = 5\n\n[train.censor]\nmethod = \"mmd\"\nlambda = 3.0\n", data)).unwrap();
    let out = dir.path().join("run");
    let status = cli()
        .args(["train", "--val", "2", "--test", "1", "--epochs", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_run"], 3);
    assert_eq!(summary["config"]["censor"]["method"], "mmd");
    assert_eq!(summary["config"]["censor"]["lambda"], 3.0);
}

//! Training loop: loss bookkeeping, determinism, presets, failure dumps.

use std::path::Path;

use axsty_core::checkpoint;
use axsty_core::config::{AttentionMode, Config, PRESETS};
use axsty_core::data::synthetic_pairs;
use axsty_core::params::ParamStore;
use axsty_core::trainer::{adam_step, train_loop, AdamState, LOG_HEADER};
use axsty_core::{Error, Tensor};

fn tiny() -> Config {
    let mut c = Config::default();
    c.model.hidden = 8;
    c.model.head_dim = 4;
    c.model.heads = 2;
    c.disc.width = 4;
    c.train.batch = 2;
    c.train.steps = 3;
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn pixel_only_total_is_scaled_pixel_sum() {
    let mut c = tiny();
    c.loss.weights.hist = 0.0;
    c.loss.weights.tv = 0.0;
    c.loss.weights.gan = 0.0;
    let pairs = synthetic_pairs(2, 16, 1).unwrap();
    let r = train_loop(&pairs, &c, None).unwrap();
    for rec in &r.history {
        let expect = rec.breakdown.scales.iter().fold(0.0, |acc, s| acc + c.loss.weights.pixel * s.pixel);
        assert_eq!(rec.breakdown.total, expect);
        assert!(rec.breakdown.scales.iter().all(|s| s.disc == 0.0 && s.gen == 0.0));
    }
}

#[test]
fn identical_runs_write_identical_checkpoints_and_logs() {
    let pairs = synthetic_pairs(3, 32, 2).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_loop(&pairs, &tiny(), Some(a.path())).unwrap();
    train_loop(&pairs, &tiny(), Some(b.path())).unwrap();
    assert_eq!(files(&a.path().join("checkpoint")), files(&b.path().join("checkpoint")));
    assert_eq!(
        std::fs::read(a.path().join("loss_log.csv")).unwrap(),
        std::fs::read(b.path().join("loss_log.csv")).unwrap()
    );
}

#[test]
fn loss_log_layout() {
    let pairs = synthetic_pairs(2, 32, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = train_loop(&pairs, &tiny(), Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("loss_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert_eq!(LOG_HEADER, "step,scale,pixel,hist,tv,gen,disc,total");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3 * 4);
    // Per-scale totals add up to the step total.
    for (s, rec) in report.history.iter().enumerate() {
        let sum: f64 = rows[s * 4..(s + 1) * 4].iter().map(|r| r[7]).sum();
        assert!((sum - rec.breakdown.total).abs() <= 1e-9 * rec.breakdown.total.abs().max(1.0));
        assert!(rows[s * 4..(s + 1) * 4].iter().all(|r| r[6] > 0.0), "discriminator loss logged");
    }
    let restored = checkpoint::load(dir.path().join("checkpoint")).unwrap();
    assert_eq!(restored.net.store().tensors().len(), report.model.net.store().tensors().len());
}

#[test]
fn adversarial_training_needs_a_4x4_coarsest_scale() {
    let pairs = synthetic_pairs(1, 16, 5).unwrap();
    let err = train_loop(&pairs, &tiny(), None).err().expect("16x16 with the adversarial loss");
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
    let mut c = tiny();
    c.loss.weights.gan = 0.0;
    c.train.steps = 1;
    assert!(train_loop(&pairs, &c, None).is_ok());
}

#[test]
fn presets_reproduce_ablation_rows() {
    assert_eq!(PRESETS, ["full", "no-adv", "no-pix", "no-hist", "standard-attention", "single-module"]);
    let full = Config::preset("full").unwrap();
    assert_eq!(full, Config::default());
    assert_eq!(Config::preset("no-adv").unwrap().loss.weights.gan, 0.0);
    assert_eq!(Config::preset("no-pix").unwrap().loss.weights.pixel, 0.0);
    assert_eq!(Config::preset("no-hist").unwrap().loss.weights.hist, 0.0);
    assert_eq!(Config::preset("standard-attention").unwrap().model.mode, AttentionMode::Full);
    assert_eq!(Config::preset("single-module").unwrap().model.repeats, 1);
    let nh = Config::preset("no-hist").unwrap();
    assert_eq!((nh.loss.weights.pixel, nh.loss.weights.tv, nh.loss.weights.gan), (100.0, 50.0, 1.0));
    assert!(Config::preset("nope").is_err());
}

#[test]
fn divergence_aborts_with_a_dump() {
    let mut c = tiny();
    c.train.lr = 1e200;
    c.train.steps = 20;
    let pairs = synthetic_pairs(2, 32, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    match train_loop(&pairs, &c, Some(dir.path())) {
        Err(Error::NonFinite { step, .. }) => assert!(step >= 1),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e200 stayed finite"),
    }
    let diag = std::fs::read_to_string(dir.path().join("diagnostic/diagnostic.txt")).unwrap();
    assert!(diag.starts_with("non-finite"));
    assert!(dir.path().join("diagnostic/weights/manifest.txt").exists());
}

#[test]
fn adam_zero_gradient_leaves_parameters_and_decays_moments() {
    let mut store = ParamStore::new();
    store.add("p", Tensor::new(&[2], vec![0.3, -0.7]).unwrap(), true);
    let mut s = AdamState::new(&store, &tiny().train);
    adam_step(&mut store, &[Tensor::new(&[2], vec![1.0, 1.0]).unwrap()], &mut s).unwrap();
    let after_one = store.tensors();
    let m1 = s.first_moment()[0].clone();
    let v1 = s.second_moment()[0].clone();
    adam_step(&mut store, &[Tensor::zeros(&[2])], &mut s).unwrap();
    // Bias-corrected momentum still moves the parameter; the moments decay
    // by exactly beta1 and beta2.
    assert_eq!(s.first_moment()[0], m1.map(|v| v * 0.9));
    assert_eq!(s.second_moment()[0], v1.map(|v| v * 0.999));
    let mut fresh = ParamStore::new();
    fresh.add("p", Tensor::new(&[2], vec![0.3, -0.7]).unwrap(), true);
    let mut s2 = AdamState::new(&fresh, &tiny().train);
    adam_step(&mut fresh, &[Tensor::zeros(&[2])], &mut s2).unwrap();
    assert_eq!(fresh.tensors()[0], Tensor::new(&[2], vec![0.3, -0.7]).unwrap());
    assert_ne!(store.tensors(), after_one);
}

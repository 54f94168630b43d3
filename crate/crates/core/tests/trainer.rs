mod common;

use std::f64::consts::PI;

use msvp_core::backbones::{BackboneSpec, Family, Model};
use msvp_core::datasets::{normalize, split, DatasetName, Pipeline};
use msvp_core::evaluation::{self, EVAL_BATCH};
use msvp_core::msvp::{FusionKind, MsvpConfig};
use msvp_core::trainer::{self, Adam, AdamConfig, EpochLog, TrainConfig, TrainData, TrainOutcome};
use msvp_core::Error;
use numcore::{ParamKind, ParamStore, Tape, Tensor};
use proptest::prelude::*;

fn no_decay() -> AdamConfig {
    AdamConfig { weight_decay: 0.0, ..Default::default() }
}

/// Run `steps` Adam updates on `f(theta) = a * (theta - c)^2`, returning every iterate.
fn adam_on_quadratic(theta0: f64, a: f64, c: f64, lr: f64, steps: usize) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("theta", Tensor::scalar(theta0), ParamKind::Trainable).unwrap();
    let mut adam = Adam::new(&store, no_decay());
    let mut out = vec![theta0];
    for _ in 0..steps {
        let tape = Tape::new();
        let th = store.bind(&tape, id);
        let d = tape.add(&th, &tape.constant(Tensor::scalar(-c))).unwrap();
        let loss = tape.scale(&tape.square(&d), a);
        let grads = tape.backward(&loss).unwrap();
        store.zero_grad();
        store.accumulate(&grads);
        adam.step(&mut store, lr).unwrap();
        out.push(store.value(id).item());
    }
    out
}

#[test]
fn ten_steps_on_a_square_match_scalar_reference() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut reference = vec![theta];
    for t in 1..=10 {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= lr * (m_hat / (v_hat.sqrt() + eps));
        reference.push(theta);
    }
    assert_eq!(adam_on_quadratic(1.0, 1.0, 0.0, lr, 10), reference);
}

proptest! {
    #[test]
    fn adam_descends_convex_quadratics_monotonically(
        a in 0.01f64..10.0,
        c in -5.0f64..5.0,
        offset in prop_oneof![1.0f64..4.0, -4.0f64..-1.0],
        lr in 1e-4f64..0.01,
    ) {
        // 20 steps of size at most ~3 lr cannot cross the minimum from distance 1
        let path = adam_on_quadratic(c + offset, a, c, lr, 20);
        let loss: Vec<f64> = path.iter().map(|t| a * (t - c) * (t - c)).collect();
        for w in loss.windows(2) {
            prop_assert!(w[1] < w[0], "loss rose: {:?}", loss);
        }
    }
}

struct Fixture {
    data: msvp_core::datasets::Dataset,
    stats: normalize::Stats,
    parts: split::SplitIndices,
}

fn mnist_subset(n: usize) -> Fixture {
    let data = common::load(DatasetName::Mnist).train.cap(n, 42, 0);
    let parts = split::split(data.len(), 0.9, 42);
    let stats = normalize::compute_stats(&data, &parts.train);
    Fixture { data, stats, parts }
}

fn run(f: &Fixture, msvp: Option<MsvpConfig>, cfg: &TrainConfig) -> (Model, TrainOutcome) {
    let spec = BackboneSpec::new(Family::Cnn4, 1, 28);
    let mut model = Model::build(spec, msvp, cfg.seed).unwrap();
    let pipeline = Pipeline { data: &f.data, stats: &f.stats, policy: DatasetName::Mnist.augment_policy(), seed: cfg.seed };
    let td = TrainData { pipeline, train_idx: &f.parts.train, val_idx: &f.parts.val };
    let outcome = trainer::train(&mut model, &td, cfg, |_| {}).unwrap();
    (model, outcome)
}

fn without_time(logs: &[EpochLog]) -> Vec<EpochLog> {
    logs.iter().map(|l| EpochLog { seconds: 0.0, ..l.clone() }).collect()
}

fn backbone_bits(m: &Model) -> Vec<(String, Vec<u32>)> {
    m.store
        .entries()
        .filter(|(_, e)| !e.name.starts_with("msvp."))
        .map(|(_, e)| (e.name.clone(), common::bits(e.value().data())))
        .collect()
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 32, ..Default::default() }
}

#[test]
fn smoke_run_lowers_the_training_loss() {
    let f = mnist_subset(200);
    let (_, out) = run(&f, None, &TrainConfig { epochs: 3, ..Default::default() });
    let loss: Vec<f64> = out.epochs.iter().map(|l| l.train_loss).collect();
    assert!(loss[2] < loss[0], "losses {loss:?}");
}

#[test]
fn identical_seeds_give_bit_identical_runs() {
    let f = mnist_subset(300);
    let cfg = small(2);
    let (a, oa) = run(&f, Some(MsvpConfig::default()), &cfg);
    let (b, ob) = run(&f, Some(MsvpConfig::default()), &cfg);
    assert_eq!(without_time(&oa.epochs), without_time(&ob.epochs));
    let all = |m: &Model| m.store.entries().map(|(_, e)| common::bits(e.value().data())).collect::<Vec<_>>();
    assert_eq!(all(&a), all(&b));
}

#[test]
fn frozen_zero_prompts_reproduce_the_baseline_trajectory() {
    let f = mnist_subset(300);
    let cfg = TrainConfig { prompt_lr_scale: 0.0, ..small(2) };
    let (base, base_out) = run(&f, None, &cfg);
    for fusion in FusionKind::ALL {
        let (m, out) = run(&f, Some(MsvpConfig::with_fusion(fusion)), &cfg);
        assert_eq!(without_time(&out.epochs), without_time(&base_out.epochs), "{fusion}");
        assert_eq!(backbone_bits(&m), backbone_bits(&base), "{fusion}");
    }
}

#[test]
fn retained_weights_are_the_best_validation_epoch() {
    let f = mnist_subset(400);
    let (model, out) = run(&f, Some(MsvpConfig::default()), &small(4));
    let best = out.epochs.iter().map(|l| l.val_acc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_acc, best);
    let first = out.epochs.iter().find(|l| l.val_acc == best).unwrap().epoch;
    assert_eq!(out.best_epoch, first);

    let pipeline = Pipeline { data: &f.data, stats: &f.stats, policy: DatasetName::Mnist.augment_policy(), seed: 42 };
    let preds = evaluation::predict(&model, &pipeline, &f.parts.val, EVAL_BATCH).unwrap();
    let labels: Vec<usize> = f.parts.val.iter().map(|&i| f.data.label(i)).collect();
    assert_eq!(evaluation::top1(&preds, &labels).unwrap(), best);
}

#[test]
fn logged_learning_rates_follow_the_cosine_formula() {
    let f = mnist_subset(200);
    let cfg = small(5);
    let (_, out) = run(&f, None, &cfg);
    for log in &out.epochs {
        let t = (log.epoch - 1) as f64;
        let expected = 0.5 * cfg.lr * (1.0 + (PI * t / cfg.epochs as f64).cos());
        assert_eq!(log.lr, expected, "epoch {}", log.epoch);
        assert_eq!(log.lr, trainer::cosine_lr(log.epoch - 1, cfg.epochs, cfg.lr, 0.0));
    }
    assert_eq!(out.epochs.iter().map(|l| l.epoch).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
}

#[test]
fn diverging_loss_aborts_with_its_location() {
    let f = mnist_subset(200);
    let spec = BackboneSpec::new(Family::Cnn4, 1, 28);
    let mut model = Model::build(spec, None, 42).unwrap();
    let id = model.store.id("head.bias").unwrap();
    model.store.set(id, Tensor::full(&[10], f32::NAN)).unwrap();
    let pipeline = Pipeline { data: &f.data, stats: &f.stats, policy: DatasetName::Mnist.augment_policy(), seed: 42 };
    let td = TrainData { pipeline, train_idx: &f.parts.train, val_idx: &f.parts.val };
    match trainer::train(&mut model, &td, &small(1), |_| {}) {
        Err(Error::NonFinite { epoch: 1, step: 1, loss }) => assert!(loss.is_nan()),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.epochs)),
    }
}

#[test]
fn epochs_default_from_the_dataset() {
    assert_eq!(TrainConfig::for_dataset(DatasetName::Mnist).epochs, 10);
    assert_eq!(TrainConfig::for_dataset(DatasetName::FashionMnist).epochs, 10);
    assert_eq!(TrainConfig::for_dataset(DatasetName::Cifar10).epochs, 150);
}

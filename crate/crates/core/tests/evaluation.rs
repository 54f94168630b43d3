mod common;

use msvp_core::backbones::{BackboneSpec, Family, Model};
use msvp_core::datasets::{normalize, DatasetName, Pipeline};
use msvp_core::evaluation::{self, ConfusionMatrix};
use msvp_core::msvp::MsvpConfig;
use msvp_core::Error;
use numcore::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn balanced_labels(per_class: usize) -> Vec<usize> {
    (0..10 * per_class).map(|i| i % 10).collect()
}

#[test]
fn constant_predictor_on_balanced_labels() {
    let labels = balanced_labels(7);
    let preds = vec![0; labels.len()];
    assert_eq!(evaluation::top1(&preds, &labels).unwrap(), 0.1);
    let cm = ConfusionMatrix::from_predictions(&preds, &labels, 10).unwrap();
    for (r, row) in cm.counts.iter().enumerate() {
        assert_eq!(row[0], 7, "row {r}");
        assert!(row[1..].iter().all(|&c| c == 0));
    }
}

#[test]
fn perfect_predictor_gives_a_diagonal_matrix() {
    let labels: Vec<usize> = (0..53).map(|i| (i * 7) % 10).collect();
    assert_eq!(evaluation::top1(&labels, &labels).unwrap(), 1.0);
    let cm = ConfusionMatrix::from_predictions(&labels, &labels, 10).unwrap();
    for r in 0..10 {
        let count = labels.iter().filter(|&&l| l == r).count() as u64;
        for c in 0..10 {
            assert_eq!(cm.counts[r][c], if r == c { count } else { 0 });
        }
    }
}

#[test]
fn seeded_random_logits_match_a_brute_force_recount() {
    let mut r = common::rng(21);
    let n = 500;
    let logits: Vec<f32> = (0..n * 10).map(|_| r.gen_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..10)).collect();
    let preds = evaluation::predictions(&logits, 10);
    let cm = ConfusionMatrix::from_predictions(&preds, &labels, 10).unwrap();
    for t in 0..10 {
        for p in 0..10 {
            let recount = (0..n)
                .filter(|&i| {
                    let row = &logits[i * 10..i * 10 + 10];
                    let best = (0..10).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                    labels[i] == t && best == p
                })
                .count() as u64;
            assert_eq!(cm.counts[t][p], recount);
        }
    }
}

proptest! {
    #[test]
    fn confusion_identities(pairs in prop::collection::vec((0usize..10, 0usize..10), 1..400)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 10).unwrap();
        prop_assert_eq!(cm.total(), labels.len() as u64);
        for (r, &s) in cm.row_sums().iter().enumerate() {
            prop_assert_eq!(s, labels.iter().filter(|&&l| l == r).count() as u64);
        }
        let acc = evaluation::top1(&preds, &labels).unwrap();
        prop_assert!((cm.trace() as f64 / cm.total() as f64 - acc).abs() < 1e-12);
        prop_assert!((cm.accuracy() - acc).abs() < 1e-12);
    }
}

#[test]
fn mismatched_or_empty_inputs_are_rejected() {
    assert!(evaluation::top1(&[], &[]).is_err());
    assert!(evaluation::top1(&[1, 2], &[1]).is_err());
    assert!(ConfusionMatrix::from_predictions(&[10], &[0], 10).is_err());
}

#[test]
fn confusion_csv_has_a_header_and_one_row_per_class() {
    let cm = ConfusionMatrix::from_predictions(&[0, 1, 1], &[0, 1, 0], 10).unwrap();
    let csv = cm.to_csv(&DatasetName::Mnist.class_names());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0].split(',').count(), 10);
    assert_eq!(lines[1], "1,1,0,0,0,0,0,0,0,0");
    assert_eq!(lines[2], "0,1,0,0,0,0,0,0,0,0");
}

#[test]
fn overhead_formula() {
    assert_eq!(evaluation::overhead(1000, 1000).unwrap().delta_pct, 0.0);
    assert_eq!(evaluation::overhead(1_000_000, 1_000_243).unwrap().delta_pct, 243.0 / 1_000_000.0 * 100.0);
    assert!(matches!(evaluation::overhead(0, 5), Err(Error::Config(_))));
}

#[test]
fn overhead_against_actual_backbones() {
    for family in Family::ALL {
        let spec = BackboneSpec::new(family, 3, 32);
        let base = Model::build(spec, None, 0).unwrap();
        let wrapped = Model::build(spec, Some(MsvpConfig::default()), 0).unwrap();
        let o = evaluation::overhead_report(&base, &wrapped).unwrap();
        assert_eq!(o.params_msvp - o.params_base, 243);
        assert_eq!(o.delta_pct, 243.0 / o.params_base as f64 * 100.0);
        assert_eq!(evaluation::overhead_report(&base, &base).unwrap().delta_pct, 0.0);
    }
    let cnn = Model::build(BackboneSpec::new(Family::Cnn4, 3, 32), None, 0).unwrap();
    let vit = Model::build(BackboneSpec::new(Family::VitTiny, 3, 32), None, 0).unwrap();
    assert!(evaluation::overhead_report(&cnn, &vit).is_err());
}

#[test]
fn accuracy_does_not_depend_on_the_evaluation_batch() {
    let data = common::load(DatasetName::Mnist).test.cap(300, 1, 1);
    let idx: Vec<usize> = (0..data.len()).collect();
    let stats = normalize::compute_stats(&data, &idx);
    let pipeline = Pipeline { data: &data, stats: &stats, policy: DatasetName::Mnist.augment_policy(), seed: 0 };
    let model = Model::build(BackboneSpec::new(Family::Cnn4, 1, 28), Some(MsvpConfig::default()), 4).unwrap();
    let reference = evaluation::predict(&model, &pipeline, &idx, 1).unwrap();
    for batch in [7, 64, 256, 1000] {
        assert_eq!(evaluation::predict(&model, &pipeline, &idx, batch).unwrap(), reference, "batch {batch}");
    }
}

fn image(family: Family, seed: u64) -> (Model, Tensor<f32>) {
    let spec = BackboneSpec::new(family, 3, 32);
    let model = Model::build(spec, Some(MsvpConfig::default()), seed).unwrap();
    (model, common::uniform_f32(&mut common::rng(seed), &[1, 3, 32, 32]))
}

#[test]
fn gradcam_maps_are_unit_range_at_input_resolution() {
    for family in [Family::Cnn4, Family::ResNet18Small] {
        let (model, x) = image(family, 30);
        for class in [0, 4, 9] {
            let map = evaluation::gradcam(&model, x.clone(), class, None).unwrap();
            assert_eq!((map.height, map.width, map.heat.len()), (32, 32, 1024));
            assert!(map.heat.iter().all(|v| (0.0..=1.0).contains(v)), "{family} class {class}");
            assert_eq!(map.layer, family.gradcam_layer().unwrap());
        }
    }
}

#[test]
fn gradcam_is_reproducible() {
    let (model, x) = image(Family::Cnn4, 31);
    let a = evaluation::gradcam(&model, x.clone(), 3, None).unwrap();
    let b = evaluation::gradcam(&model, x, 3, None).unwrap();
    assert_eq!(a.heat, b.heat);
}

#[test]
fn constant_logit_head_gives_an_all_zero_map() {
    for family in [Family::Cnn4, Family::ResNet18Small] {
        let (mut model, x) = image(family, 32);
        let id = model.store.id("head.weight").unwrap();
        let shape = model.store.value(id).shape().to_vec();
        model.store.set(id, Tensor::zeros(&shape)).unwrap();
        let map = evaluation::gradcam(&model, x, 2, None).unwrap();
        assert!(map.heat.iter().all(|&v| v == 0.0), "{family}");
    }
}

#[test]
fn gradcam_layer_override_and_refusals() {
    let (model, x) = image(Family::ResNet18Small, 33);
    let map = evaluation::gradcam(&model, x.clone(), 1, Some("stage3")).unwrap();
    assert_eq!(map.layer, "stage3");
    assert!(matches!(evaluation::gradcam(&model, x.clone(), 1, Some("stage9")), Err(Error::Config(_))));
    assert!(matches!(evaluation::gradcam(&model, x, 10, None), Err(Error::Config(_))));
    let (vit, x) = image(Family::VitTiny, 34);
    assert!(matches!(evaluation::gradcam(&vit, x, 0, None), Err(Error::Unsupported(_))));
}

#[test]
fn gradcam_pgm_encodes_the_heat() {
    let (model, x) = image(Family::Cnn4, 35);
    let map = evaluation::gradcam(&model, x, 5, None).unwrap();
    let pgm = map.pgm();
    let body = &pgm[b"P5\n32 32\n255\n".len()..];
    assert_eq!(body.len(), 1024);
    for (b, h) in body.iter().zip(&map.heat) {
        assert_eq!(*b, (h * 255.0).round() as u8);
    }
}

mod common;

use msvp_core::datasets::idx::{read_idx, IMAGE_MAGIC};
use msvp_core::datasets::{normalize, split, DatasetName, Pipeline};

#[test]
fn mnist_training_images_header() {
    let arr = read_idx(&common::data_root().join("mnist/train-images-idx3-ubyte"), IMAGE_MAGIC).unwrap();
    assert_eq!(IMAGE_MAGIC, 2051);
    assert_eq!(arr.dims, [60_000, 28, 28]);
}

#[test]
fn official_sets_have_their_documented_sizes_and_balance() {
    for name in DatasetName::ALL {
        let b = common::load(name);
        let (train, test) = if name == DatasetName::Cifar10 { (50_000, 10_000) } else { (60_000, 10_000) };
        assert_eq!((b.train.len(), b.test.len()), (train, test), "{name}");
        let r = name.resolution();
        assert_eq!(b.train.image_len(), name.channels() * r * r);
        if name != DatasetName::Mnist {
            assert_eq!(b.test.class_histogram(), [1000; 10], "{name}");
        }
    }
    // the official MNIST test set is not class-balanced
    assert_eq!(common::load(DatasetName::Mnist).test.class_histogram(), [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
    assert_eq!(common::load(DatasetName::Cifar10).train.class_histogram(), [5000; 10]);
    assert_eq!(common::load(DatasetName::FashionMnist).train.class_histogram(), [6000; 10]);
}

#[test]
fn mnist_training_split_statistics() {
    let b = common::load(DatasetName::Mnist);
    let parts = split::split(b.train.len(), 0.9, 42);
    assert_eq!((parts.train.len(), parts.val.len()), (54_000, 6_000));
    let stats = normalize::compute_stats(&b.train, &parts.train);
    assert!((stats.mean[0] - 0.1307).abs() < 0.002, "mean {}", stats.mean[0]);
    assert!((stats.std[0] - 0.3081).abs() < 0.002, "std {}", stats.std[0]);
}

#[test]
fn cifar_channels_have_distinct_statistics() {
    let b = common::load(DatasetName::Cifar10);
    let parts = split::split(b.train.len(), 0.9, 42);
    let stats = normalize::compute_stats(&b.train, &parts.train);
    let reference = [(0.4914, 0.2470), (0.4822, 0.2435), (0.4465, 0.2616)];
    for (c, (m, s)) in reference.iter().enumerate() {
        assert!((stats.mean[c] - m).abs() < 0.005, "channel {c} mean {}", stats.mean[c]);
        assert!((stats.std[c] - s).abs() < 0.005, "channel {c} std {}", stats.std[c]);
    }
}

#[test]
fn normalized_training_batch_is_roughly_standard() {
    let b = common::load(DatasetName::Mnist);
    let parts = split::split(b.train.len(), 0.9, 42);
    let stats = normalize::compute_stats(&b.train, &parts.train);
    let pipeline = Pipeline { data: &b.train, stats: &stats, policy: DatasetName::Mnist.augment_policy(), seed: 42 };
    let x = pipeline.batch(&parts.train[..2000]);
    assert_eq!(x.shape(), &[2000, 1, 28, 28]);
    let n = x.len() as f64;
    let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
}

#[test]
fn capped_subsets_are_seeded_and_stable() {
    let b = common::load(DatasetName::FashionMnist);
    let a = b.train.cap(500, 42, 0);
    assert_eq!(a.len(), 500);
    let again = b.train.cap(500, 42, 0);
    assert!((0..500).all(|i| a.image(i) == again.image(i) && a.label(i) == again.label(i)));
    let other = b.train.cap(500, 43, 0);
    assert!((0..500).any(|i| a.image(i) != other.image(i)));
}

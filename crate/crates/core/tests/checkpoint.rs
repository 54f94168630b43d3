mod common;

use msvp_core::backbones::{BackboneSpec, Family, Model};
use msvp_core::msvp::{MsvpConfig, PREFIX};
use msvp_core::trainer::checkpoint::MAGIC;
use msvp_core::trainer::{Checkpoint, CheckpointMeta};
use msvp_core::{CheckpointError, Error};
use numcore::Tensor;

fn meta() -> CheckpointMeta {
    CheckpointMeta { config_hash: 0xfeed_beef, epoch: 3, metric: 0.875, config: "dataset = cifar10\nbackbone = cnn4\n".into() }
}

/// Perturb every entry, including batch-norm buffers and prompts, so a
/// restored model can only match by actually loading the values.
fn scramble(m: &mut Model, seed: u64) {
    let mut r = common::rng(seed);
    let ids: Vec<_> = m.store.entries().map(|(id, _)| id).collect();
    for id in ids {
        let v = m.store.value(id).clone();
        let noise = common::uniform_f32(&mut r, v.shape());
        let variance = m.store.entry(id).name.ends_with("running_var");
        let t = Tensor::from_fn(v.shape(), |i| {
            let x = v.data()[i] + 0.05 * noise.data()[i];
            if variance { x.abs() + 0.5 } else { x }
        });
        m.store.set(id, t).unwrap();
    }
}

#[test]
fn round_trip_reproduces_test_logits_for_every_backbone() {
    let dir = tempfile::tempdir().unwrap();
    for family in Family::ALL {
        let spec = BackboneSpec::new(family, 3, 32);
        let mut trained = Model::build(spec, Some(MsvpConfig::default()), 1).unwrap();
        scramble(&mut trained, 2);
        let x = common::uniform_f32(&mut common::rng(3), &[4, 3, 32, 32]);
        let before = trained.logits(x.clone()).unwrap();

        let path = dir.path().join(format!("{family}.bin"));
        Checkpoint::capture(&trained.store, meta(), "").save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta, meta());

        let mut fresh = Model::build(spec, Some(MsvpConfig::default()), 99).unwrap();
        assert_ne!(common::bits(fresh.logits(x.clone()).unwrap().data()), common::bits(before.data()));
        loaded.restore(&mut fresh.store, "").unwrap();
        assert_eq!(common::bits(fresh.logits(x).unwrap().data()), common::bits(before.data()), "{family}");
    }
}

#[test]
fn loading_into_another_backbone_names_the_first_offender() {
    let cnn = Model::build(BackboneSpec::new(Family::Cnn4, 3, 32), None, 0).unwrap();
    let mut resnet = Model::build(BackboneSpec::new(Family::ResNet18Small, 3, 32), None, 0).unwrap();
    let ck = Checkpoint::capture(&cnn.store, meta(), "");
    let first = cnn.store.entries().next().unwrap().1.name.clone();
    match ck.restore(&mut resnet.store, "") {
        Err(CheckpointError::Registry { name, .. }) => assert_eq!(name, first),
        other => panic!("expected a registry mismatch, got {other:?}"),
    }
}

#[test]
fn shape_and_coverage_mismatches_are_reported() {
    let spec = BackboneSpec::new(Family::Cnn4, 1, 28);
    let m = Model::build(spec, None, 0).unwrap();
    let mut ck = Checkpoint::capture(&m.store, meta(), "");
    let mut target = Model::build(spec, None, 1).unwrap();

    ck.records[0].shape.push(1);
    let name = ck.records[0].name.clone();
    assert!(matches!(ck.restore(&mut target.store, ""), Err(CheckpointError::Shape { name: n, .. }) if n == name));
    ck.records[0].shape.pop();

    let dropped = ck.records.pop().unwrap();
    match ck.restore(&mut target.store, "") {
        Err(CheckpointError::Registry { name, detail }) => {
            assert_eq!(name, dropped.name);
            assert!(detail.contains("missing"));
        }
        other => panic!("expected a missing entry, got {other:?}"),
    }
}

#[test]
fn prompt_only_checkpoint_size() {
    let m = Model::build(BackboneSpec::new(Family::ResNet18Small, 3, 32), Some(MsvpConfig::default()), 0).unwrap();
    let ck = Checkpoint::capture(&m.store, meta(), PREFIX);
    assert_eq!(ck.records.len(), 3);
    assert_eq!(ck.payload_bytes(), 243 * 4);

    let meta_text = "config_hash=00000000feedbeef\nepoch=3\nmetric=0.875\nconfig.dataset = cifar10\nconfig.backbone = cnn4\n";
    let headers: usize = ck.records.iter().map(|r| 4 + r.name.len() + 2 + 4 * r.shape.len()).sum();
    assert_eq!(ck.encode().len(), 8 + 4 + 4 + meta_text.len() + 4 + headers + 243 * 4);

    let mut other = Model::build(BackboneSpec::new(Family::ResNet18Small, 3, 32), Some(MsvpConfig::default()), 5).unwrap();
    ck.restore(&mut other.store, PREFIX).unwrap();
}

#[test]
fn corrupt_files_are_distinguished() {
    let m = Model::build(BackboneSpec::new(Family::Cnn4, 1, 28), None, 0).unwrap();
    let bytes = Checkpoint::capture(&m.store, meta(), "").encode();
    assert_eq!(&bytes[..8], MAGIC);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::BadMagic { .. })));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Version(9))));
    assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::decode(&long), Err(CheckpointError::Malformed(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("nope.bin")), Err(Error::Io { .. })));
}

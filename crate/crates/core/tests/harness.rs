mod common;

use std::path::Path;

use msvp_core::backbones::{Family, Model};
use msvp_core::datasets::DatasetName;
use msvp_core::harness::run::{CHECKPOINT_FILE, CONFIG_FILE, CONFUSION_FILE, PROMPT_DIR, REPORT_FILE};
use msvp_core::harness::suite::{delta, pct, INDEX_FILE};
use msvp_core::harness::{self, emit_report, run_experiment, run_suite, CellStatus, ExperimentConfig, RawConfig, RunReport, Suite, SuiteOptions};
use msvp_core::msvp::{FusionKind, MsvpConfig};
use msvp_core::Error;

fn config_err(text: &str) -> String {
    match ExperimentConfig::parse(text) {
        Err(Error::Config(m)) => m,
        other => panic!("expected a config error for {text:?}, got {other:?}"),
    }
}

#[test]
fn shipped_config_parses_and_round_trips() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_cnn4_msvp.txt");
    let cfg = ExperimentConfig::from_file(&path, &[]).unwrap();
    assert_eq!(cfg.dataset, DatasetName::Mnist);
    assert_eq!(cfg.train.epochs, 10);
    assert_eq!(cfg.variant(), "msvp-addition-gml");
    assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn overrides_win_and_locations_do_not_change_the_hash() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_cnn4_msvp.txt");
    let base = ExperimentConfig::from_file(&path, &[]).unwrap();
    let moved = ExperimentConfig::from_file(&path, &["output.dir=elsewhere".into(), "data.dir = /tmp/x".into()]).unwrap();
    assert_eq!(moved.hash(), base.hash());
    let changed = ExperimentConfig::from_file(&path, &["train.epochs=2".into()]).unwrap();
    assert_eq!(changed.train.epochs, 2);
    assert_ne!(changed.hash(), base.hash());
}

#[test]
fn invalid_configs_name_the_violated_constraint() {
    assert!(config_err("backbone = cnn4\n").contains("`dataset` is required"));
    assert!(config_err("dataset = svhn\nbackbone = cnn4\n").contains("dataset"));
    assert!(config_err("dataset = mnist\nbackbone = cnn4\ncolour = red\n").contains("unknown key `colour`"));
    assert!(config_err("dataset = mnist\nbackbone = cnn4\nbackbone.in_channels = 3\n").contains("in_channels"));
    assert!(config_err("dataset = mnist\nbackbone = cnn4\nbackbone = vit_tiny\n").contains("already set"));
    assert!(config_err("dataset = mnist\nbackbone = cnn4\ntrain.batch_size = many\n").contains("train.batch_size"));
    assert!(config_err("dataset = mnist\nbackbone = cnn4\ndata.subset = 5\n").contains("data.subset"));
    let msg = config_err("dataset = mnist\nbackbone = cnn4\nmsvp.enabled = true\nmsvp.s_local = 40\n");
    assert!(msg.contains("s_local"), "{msg}");
    let mut raw = RawConfig::default();
    assert!(raw.set_assignment("no equals sign").is_err());
}

#[test]
fn fashion_resnet_addition_adds_81_parameters() {
    let cfg = ExperimentConfig::parse("dataset = fashion_mnist\nbackbone = resnet18_small\nmsvp.enabled = true\nmsvp.fusion = addition\n").unwrap();
    let m = Model::build(cfg.backbone, cfg.msvp, 42).unwrap();
    assert_eq!(m.count_msvp_params(), 81);
    let base = Model::build(cfg.backbone, None, 42).unwrap();
    assert_eq!(m.count_params() - base.count_params(), 81);
}

fn smoke_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetName::Mnist, Family::Cnn4, Some(MsvpConfig::default()));
    cfg.train.epochs = 1;
    cfg.subset = Some(500);
    cfg.test_subset = Some(200);
    cfg.data_dir = common::data_root();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn smoke_run_writes_every_artifact_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a_dir, b_dir) = (tmp.path().join("a"), tmp.path().join("b"));
    let a = run_experiment(&smoke_config(&a_dir), &mut |_| {}).unwrap();
    for f in [REPORT_FILE, CONFIG_FILE, CONFUSION_FILE, CHECKPOINT_FILE] {
        assert!(a_dir.join(f).is_file(), "{f} missing");
    }
    let prompts: Vec<_> = std::fs::read_dir(a_dir.join(PROMPT_DIR)).unwrap().collect();
    assert!(!prompts.is_empty());

    let s = &a.report.summary;
    assert_eq!((s.train_size, s.val_size, s.test_size), (450, 50, 200));
    assert_eq!(s.params_msvp, 81);
    assert_eq!(s.params_total - s.params_base, 81);
    assert_eq!(a.confusion.total(), 200);
    assert!((a.confusion.accuracy() - s.test_acc).abs() < 1e-12);

    let loaded = RunReport::load(&a_dir).unwrap();
    assert_eq!(loaded, a.report);
    assert_eq!(ExperimentConfig::parse(&std::fs::read_to_string(a_dir.join(CONFIG_FILE)).unwrap()).unwrap(), smoke_config(&a_dir));

    let b = run_experiment(&smoke_config(&b_dir), &mut |_| {}).unwrap();
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(std::fs::read(a_dir.join(CHECKPOINT_FILE)).unwrap(), std::fs::read(b_dir.join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn checkpoint_restore_reproduces_test_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = run_experiment(&smoke_config(&dir), &mut |_| {}).unwrap();
    let (restored, data) = harness::restore(&dir.join(CHECKPOINT_FILE), &common::data_root()).unwrap();
    let capped = data.test.cap(200, 42, 1);
    let (preds, _) = harness::run::evaluate_test(&restored.model, &capped, &restored.stats).unwrap();
    assert_eq!(preds, out.test_predictions);
}

#[test]
fn missing_data_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config(&tmp.path().join("out"));
    cfg.data_dir = tmp.path().join("nowhere");
    assert!(matches!(run_experiment(&cfg, &mut |_| {}), Err(Error::Data(_))));
}

#[test]
fn empty_root_reports_no_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (md, files) = emit_report(&tmp.path().join("fresh")).unwrap();
    assert!(md.contains("No runs found"));
    assert!(files.iter().all(|f| f.is_file()));
}

#[test]
fn suite_resumes_and_report_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut opts = SuiteOptions::new(tmp.path(), common::data_root());
    opts.subset = Some(60);
    opts.epochs = Some(1);

    let first = run_suite(Suite::FusionAblation, &opts, &mut |_| {}).unwrap();
    assert_eq!(first.index.cells.len(), FusionKind::ALL.len());
    assert!(first.index.cells.iter().all(|c| c.status == CellStatus::Ok));
    assert!(tmp.path().join(Suite::FusionAblation.key()).join(INDEX_FILE).is_file());
    assert_eq!(first.table.rows.len(), 3);

    let again = run_suite(Suite::FusionAblation, &opts, &mut |_| {}).unwrap();
    assert!(again.index.cells.iter().all(|c| c.status == CellStatus::Reused));
    assert_eq!(again.table, first.table);

    let (md1, _) = emit_report(tmp.path()).unwrap();
    let bytes1 = std::fs::read(tmp.path().join(harness::REPORT_MD)).unwrap();
    let (md2, _) = emit_report(tmp.path()).unwrap();
    assert_eq!(md1, md2);
    assert_eq!(bytes1, std::fs::read(tmp.path().join(harness::REPORT_MD)).unwrap());
    assert!(md1.contains("subset run"));

    opts.force = true;
    let forced = run_suite(Suite::FusionAblation, &opts, &mut |_| {}).unwrap();
    assert!(forced.index.cells.iter().all(|c| c.status == CellStatus::Ok));
    assert_eq!(forced.table, first.table);
}

#[test]
fn deltas_are_recomputed_from_the_two_accuracies() {
    assert_eq!(delta(0.9921, 0.9912, DatasetName::Mnist), "+0.09");
    assert_eq!(delta(0.8512, 0.8563, DatasetName::Cifar10), "-0.5");
    assert_eq!(pct(0.99215, DatasetName::Mnist), "99.22");
    assert_eq!(delta(0.5, 0.5, DatasetName::FashionMnist), "+0.00");
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::backbones::Model;
use crate::datasets::{self, normalize, split, AugmentPolicy, DataBundle, Dataset, Pipeline};
use crate::error::{Error, Result};
use crate::evaluation::{self, ConfusionMatrix, EVAL_BATCH};
use crate::msvp::export_prompts;
use crate::trainer::{self, Checkpoint, CheckpointMeta, EpochLog, TrainData};

pub const REPORT_FILE: &str = "report.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PROMPT_DIR: &str = "prompts";
pub const VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl From<&EpochLog> for EpochRecord {
    fn from(l: &EpochLog) -> Self {
        EpochRecord { epoch: l.epoch, train_loss: l.train_loss, val_acc: l.val_acc, lr: l.lr, seconds: l.seconds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub test_acc: f64,
    pub best_epoch: usize,
    pub params_total: usize,
    pub params_msvp: usize,
    pub params_base: usize,
    pub delta_pct: f64,
    pub best_val_acc: f64,
    pub dataset: String,
    pub backbone: String,
    pub variant: String,
    pub epochs: usize,
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub config_hash: String,
    pub wall_seconds: f64,
}

/// Per-epoch log and final metrics of one run, serialized as JSON lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: FinalRecord,
}

impl RunReport {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e).expect("plain record"));
            s.push('\n');
        }
        s.push_str(&serde_json::to_string(&self.summary).expect("plain record"));
        s.push('\n');
        s
    }

    pub fn parse_jsonl(text: &str) -> std::result::Result<Self, String> {
        let mut epochs = Vec::new();
        let mut summary = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            if v.get("test_acc").is_some() {
                summary = Some(serde_json::from_value(v).map_err(|e| format!("line {}: {e}", n + 1))?);
            } else {
                epochs.push(serde_json::from_value(v).map_err(|e| format!("line {}: {e}", n + 1))?);
            }
        }
        let summary = summary.ok_or("no final record")?;
        Ok(RunReport { epochs, summary })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        RunReport::parse_jsonl(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The report with every wall-clock field zeroed, for comparing metrics.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r.summary.wall_seconds = 0.0;
        r
    }
}

/// Train and test sets after applying the configured caps.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let bundle = datasets::load(cfg.dataset, &cfg.data_dir)?;
    let seed = cfg.train.seed;
    let train = cfg.subset.map_or_else(|| bundle.train.clone(), |n| bundle.train.cap(n, seed, 0));
    let test = cfg.test_subset.map_or_else(|| bundle.test.clone(), |n| bundle.test.cap(n, seed, 1));
    Ok(DataBundle { train, test })
}

/// Everything produced by [`run_experiment`].
pub struct RunOutput {
    pub report: RunReport,
    pub model: Model,
    pub dir: PathBuf,
    pub test_predictions: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

/// Parse, split, train, evaluate the best checkpoint on the test set and
/// write all artifacts into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    run_with_data(cfg, &data, started, progress)
}

pub fn run_with_data(
    cfg: &ExperimentConfig,
    data: &DataBundle,
    started: Instant,
    progress: &mut dyn FnMut(&str),
) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let seed = cfg.train.seed;
    let parts = split::split(data.train.len(), 1.0 - VAL_FRACTION, seed);
    let stats = normalize::load_or_compute(&dir, &data.train, &parts.train, seed, cfg.subset)?;
    let mut model = Model::build(cfg.backbone, cfg.msvp.clone(), seed)?;
    let baseline = Model::build(cfg.backbone, None, seed)?;
    let over = evaluation::overhead_report(&baseline, &model)?;
    drop(baseline);

    progress(&format!(
        "{} / {} / {}: {} train, {} val, {} test, {} params ({} prompt)",
        cfg.dataset.key(),
        cfg.backbone.family.key(),
        cfg.variant(),
        parts.train.len(),
        parts.val.len(),
        data.test.len(),
        model.count_params(),
        model.count_msvp_params()
    ));
    let train_data = TrainData {
        pipeline: Pipeline { data: &data.train, stats: &stats, policy: cfg.dataset.augment_policy(), seed },
        train_idx: &parts.train,
        val_idx: &parts.val,
    };
    let outcome = trainer::train(&mut model, &train_data, &cfg.train, |log| {
        progress(&format!(
            "  epoch {:>3}/{}: loss {:.4}  val {:.4}  lr {:.3e}  {:.1}s",
            log.epoch, cfg.train.epochs, log.train_loss, log.val_acc, log.lr, log.seconds
        ))
    })?;

    let (preds, labels) = evaluate_test(&model, &data.test, &stats)?;
    let test_acc = evaluation::top1(&preds, &labels)?;
    let confusion = ConfusionMatrix::from_predictions(&preds, &labels, model.spec.num_classes)?;

    let summary = FinalRecord {
        test_acc,
        best_epoch: outcome.best_epoch,
        params_total: model.count_params(),
        params_msvp: model.count_msvp_params(),
        params_base: over.params_base,
        delta_pct: over.delta_pct,
        best_val_acc: outcome.best_val_acc,
        dataset: cfg.dataset.key().into(),
        backbone: cfg.backbone.family.key().into(),
        variant: cfg.variant(),
        epochs: cfg.train.epochs,
        subset: cfg.subset,
        test_subset: cfg.test_subset,
        train_size: parts.train.len(),
        val_size: parts.val.len(),
        test_size: labels.len(),
        config_hash: format!("{:016x}", cfg.hash()),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let report = RunReport { epochs: outcome.epochs.iter().map(EpochRecord::from).collect(), summary };

    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(CONFIG_FILE, cfg.to_text().as_bytes())?;
    write(CONFUSION_FILE, confusion.to_csv(&cfg.dataset.class_names()).as_bytes())?;
    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        epoch: outcome.best_epoch,
        metric: outcome.best_val_acc,
        config: cfg.canonical_text(),
    };
    Checkpoint::capture(&model.store, meta, "").save(&dir.join(CHECKPOINT_FILE))?;
    if let Some(m) = &model.msvp {
        let r = cfg.backbone.resolution;
        export_prompts(m, &model.store, &dir.join(PROMPT_DIR), r, r)?;
    }
    write(REPORT_FILE, report.to_jsonl().as_bytes())?;
    progress(&format!(
        "  test acc {:.4} (best epoch {}, {:.0}s)",
        report.summary.test_acc, report.summary.best_epoch, report.summary.wall_seconds
    ));
    Ok(RunOutput { report, model, dir, test_predictions: preds, test_labels: labels, confusion })
}

/// Eval-mode predictions and labels over a whole (unaugmented) set.
pub fn evaluate_test(model: &Model, test: &Dataset, stats: &datasets::Stats) -> Result<(Vec<usize>, Vec<usize>)> {
    let pipeline = Pipeline { data: test, stats, policy: AugmentPolicy::none(), seed: 0 };
    let idx: Vec<usize> = (0..test.len()).collect();
    let preds = evaluation::predict(model, &pipeline, &idx, EVAL_BATCH)?;
    let labels = idx.iter().map(|&i| test.label(i)).collect();
    Ok((preds, labels))
}

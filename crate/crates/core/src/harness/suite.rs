use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunReport, REPORT_FILE};
use super::table::Table;
use crate::backbones::Family;
use crate::datasets::DatasetName;
use crate::error::{Error, Result};
use crate::msvp::{count_msvp_params, FusionKind, MsvpConfig, ScaleSet};

pub const INDEX_FILE: &str = "index.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Suite {
    MainResults,
    ScaleAblation,
    FusionAblation,
    BackboneComparison,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::MainResults, Suite::ScaleAblation, Suite::FusionAblation, Suite::BackboneComparison];

    pub fn key(self) -> &'static str {
        match self {
            Suite::MainResults => "main_results",
            Suite::ScaleAblation => "scale_ablation",
            Suite::FusionAblation => "fusion_ablation",
            Suite::BackboneComparison => "backbone_comparison",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.key() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected main_results, scale_ablation, fusion_ablation or backbone_comparison)"))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Root holding `runs/` and one directory per suite.
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    /// Cap on both the training and the test images of every cell.
    pub subset: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: u64,
    pub force: bool,
    /// Allow cells that run the full 150-epoch CIFAR-10 protocol.
    pub confirm_long: bool,
}

impl SuiteOptions {
    pub fn new(out_dir: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        SuiteOptions {
            out_dir: out_dir.into(),
            data_dir: data_dir.into(),
            subset: None,
            epochs: None,
            seed: 42,
            force: false,
            confirm_long: false,
        }
    }
}

/// One experiment of a suite.
#[derive(Clone, Debug)]
pub struct Cell {
    pub id: String,
    pub config: ExperimentConfig,
}

impl Cell {
    fn new(dataset: DatasetName, family: Family, msvp: Option<MsvpConfig>, opts: &SuiteOptions) -> Self {
        let mut config = ExperimentConfig::new(dataset, family, msvp);
        config.train.seed = opts.seed;
        if let Some(e) = opts.epochs {
            config.train.epochs = e;
        }
        config.subset = opts.subset;
        config.test_subset = opts.subset;
        config.data_dir = opts.data_dir.clone();
        let mut id = format!("{}-{}-{}", dataset.key(), family.key(), config.variant());
        if let Some(n) = opts.subset {
            id.push_str(&format!("-subset{n}"));
        }
        if let Some(e) = opts.epochs {
            id.push_str(&format!("-e{e}"));
        }
        if opts.seed != 42 {
            id.push_str(&format!("-seed{}", opts.seed));
        }
        config.output_dir = opts.out_dir.join(RUNS_DIR).join(&id);
        Cell { id, config }
    }

    /// Full-protocol CIFAR-10 cells.
    pub fn is_long(&self) -> bool {
        self.config.dataset == DatasetName::Cifar10 && self.config.train.epochs >= DatasetName::Cifar10.default_epochs()
    }

    /// Rough single-thread wall time, from measured per-image step costs.
    pub fn estimated_seconds(&self) -> f64 {
        let per_image = match (self.config.backbone.family, self.config.dataset) {
            (Family::Cnn4, _) => 0.0025,
            (Family::ResNet18Small, DatasetName::Cifar10) => 0.05,
            (Family::ResNet18Small, _) => 0.04,
            (Family::VitTiny, DatasetName::Cifar10) => 0.08,
            (Family::VitTiny, _) => 0.03,
        };
        let n = self.config.dataset_train_len() as f64;
        per_image * n * self.config.train.epochs as f64 * 1.1
    }
}

impl ExperimentConfig {
    fn dataset_train_len(&self) -> usize {
        let full = match self.dataset {
            DatasetName::Cifar10 => 50_000,
            _ => 60_000,
        };
        self.subset.map_or(full, |n| n.min(full))
    }
}

fn addition(scales: ScaleSet) -> MsvpConfig {
    MsvpConfig { enabled: scales, ..Default::default() }
}

pub fn cells(suite: Suite, opts: &SuiteOptions) -> Vec<Cell> {
    let ablation_pair = (DatasetName::FashionMnist, Family::ResNet18Small);
    match suite {
        Suite::MainResults | Suite::BackboneComparison => DatasetName::ALL
            .into_iter()
            .flat_map(|d| Family::ALL.into_iter().map(move |f| (d, f)))
            .flat_map(|(d, f)| [Cell::new(d, f, None, opts), Cell::new(d, f, Some(MsvpConfig::default()), opts)])
            .collect(),
        Suite::ScaleAblation => {
            let (d, f) = ablation_pair;
            std::iter::once(None)
                .chain([ScaleSet::GLOBAL, ScaleSet::GLOBAL_MID, ScaleSet::FULL].map(|s| Some(addition(s))))
                .map(|m| Cell::new(d, f, m, opts))
                .collect()
        }
        Suite::FusionAblation => {
            let (d, f) = ablation_pair;
            FusionKind::ALL.iter().map(|&k| Cell::new(d, f, Some(MsvpConfig::with_fusion(k)), opts)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Reused,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub dataset: String,
    pub backbone: String,
    pub variant: String,
    pub status: CellStatus,
    pub message: Option<String>,
    /// Relative to the suite root.
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteIndex {
    pub suite: String,
    pub subset: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: u64,
    pub cells: Vec<IndexEntry>,
}

impl SuiteIndex {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub struct SuiteOutcome {
    pub index: SuiteIndex,
    pub table: Table,
    pub files: Vec<PathBuf>,
}

/// Run (or reuse) every cell of `suite`, then write the table as CSV and
/// aligned text together with `index.json`. A failing cell is recorded
/// and the suite continues.
pub fn run_suite(suite: Suite, opts: &SuiteOptions, progress: &mut dyn FnMut(&str)) -> Result<SuiteOutcome> {
    let cells = cells(suite, opts);
    let pending: Vec<&Cell> = cells.iter().filter(|c| opts.force || !c.config.output_dir.join(REPORT_FILE).exists()).collect();
    let estimate = pending.iter().filter(|c| !c.is_long() || opts.confirm_long).map(|c| c.estimated_seconds()).fold(0.0, |a, b| a + b);
    let estimate = if estimate < 3600.0 { format!("{:.0} min", estimate / 60.0) } else { format!("{:.1} h", estimate / 3600.0) };
    progress(&format!("suite {suite}: {} cells, {} to run, estimated {estimate} single-threaded", cells.len(), pending.len()));
    let mut entries = Vec::new();
    for cell in &cells {
        let c = &cell.config;
        let mut entry = IndexEntry {
            id: cell.id.clone(),
            dataset: c.dataset.key().into(),
            backbone: c.backbone.family.key().into(),
            variant: c.variant(),
            status: CellStatus::Ok,
            message: None,
            dir: format!("{RUNS_DIR}/{}", cell.id),
        };
        let done = c.output_dir.join(REPORT_FILE).exists();
        if done && !opts.force {
            entry.status = CellStatus::Reused;
        } else if cell.is_long() && !opts.confirm_long {
            entry.status = CellStatus::Skipped;
            entry.message = Some(format!(
                "full {}-epoch CIFAR-10 run (about {:.1} h) needs --confirm-long",
                c.train.epochs,
                cell.estimated_seconds() / 3600.0
            ));
            progress(&format!("skip {}: {}", cell.id, entry.message.as_deref().unwrap_or("")));
        } else {
            progress(&format!("run {}", cell.id));
            if let Err(e) = run_experiment(c, progress) {
                progress(&format!("failed {}: {e}", cell.id));
                entry.status = CellStatus::Failed;
                entry.message = Some(e.to_string());
            }
        }
        entries.push(entry);
    }
    let index = SuiteIndex { suite: suite.key().into(), subset: opts.subset, epochs: opts.epochs, seed: opts.seed, cells: entries };
    let table = suite_table(suite, &index, &opts.out_dir)?;
    let dir = opts.out_dir.join(suite.key());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    let json = serde_json::to_string_pretty(&index).expect("plain index") + "\n";
    for (name, body) in [(INDEX_FILE, json), ("table.csv", table.to_csv()?), ("table.txt", table.to_text())] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    Ok(SuiteOutcome { index, table, files })
}

/// Completed reports of an index, keyed by cell id.
pub fn load_reports(index: &SuiteIndex, root: &Path) -> BTreeMap<String, RunReport> {
    index
        .cells
        .iter()
        .filter(|e| matches!(e.status, CellStatus::Ok | CellStatus::Reused))
        .filter_map(|e| RunReport::load(&root.join(&e.dir)).ok().map(|r| (e.id.clone(), r)))
        .collect()
}

fn dataset_of(key: &str) -> DatasetName {
    key.parse().expect("index holds valid dataset keys")
}

/// Accuracy in percent at the dataset's reporting precision.
pub fn pct(acc: f64, dataset: DatasetName) -> String {
    format!("{:.*}", dataset.report_precision(), acc * 100.0)
}

/// Signed accuracy difference in points, computed from the two cells.
pub fn delta(msvp: f64, base: f64, dataset: DatasetName) -> String {
    format!("{:+.*}", dataset.report_precision(), (msvp - base) * 100.0)
}

fn subset_note(index: &SuiteIndex) -> Vec<String> {
    let mut notes = Vec::new();
    if let Some(n) = index.subset {
        notes.push(format!("subset run: at most {n} training and {n} test images per cell; not a full reproduction"));
    }
    if let Some(e) = index.epochs {
        notes.push(format!("epochs overridden to {e}"));
    }
    notes
}

fn cell_notes(index: &SuiteIndex) -> Vec<String> {
    index
        .cells
        .iter()
        .filter(|e| matches!(e.status, CellStatus::Failed | CellStatus::Skipped))
        .map(|e| format!("{} {}: {}", e.id, if e.status == CellStatus::Failed { "failed" } else { "skipped" }, e.message.as_deref().unwrap_or("")))
        .collect()
}

/// The paired baseline / MS-VP reports of a main-results index.
fn pairs(index: &SuiteIndex, reports: &BTreeMap<String, RunReport>) -> Vec<(DatasetName, Family, Option<f64>, Option<f64>)> {
    let mut out = Vec::new();
    for d in DatasetName::ALL {
        for f in Family::ALL {
            let find = |baseline: bool| {
                index
                    .cells
                    .iter()
                    .filter(|e| e.dataset == d.key() && e.backbone == f.key() && (e.variant == "baseline") == baseline)
                    .find_map(|e| reports.get(&e.id))
                    .map(|r| r.summary.test_acc)
            };
            let (b, m) = (find(true), find(false));
            if b.is_some() || m.is_some() {
                out.push((d, f, b, m));
            }
        }
    }
    out
}

pub fn suite_table(suite: Suite, index: &SuiteIndex, root: &Path) -> Result<Table> {
    let reports = load_reports(index, root);
    let opt_pct = |a: Option<f64>, d| a.map_or("-".to_string(), |a| pct(a, d));
    let mut t = match suite {
        Suite::MainResults => {
            let mut t = Table::new("Test accuracy (%): baseline vs MS-VP", &["Dataset", "Model", "Baseline", "MS-VP", "Delta"]);
            for (d, f, b, m) in pairs(index, &reports) {
                let dl = match (b, m) {
                    (Some(b), Some(m)) => delta(m, b, d),
                    _ => "-".into(),
                };
                t.push(vec![d.display_name().into(), f.display_name().into(), opt_pct(b, d), opt_pct(m, d), dl]);
            }
            t
        }
        Suite::BackboneComparison => {
            let mut t = Table::new(
                "Backbone comparison: MS-VP gain (points) and parameter overhead",
                &["Model", "Params", "MNIST", "Fashion-MNIST", "CIFAR-10"],
            );
            let ps = pairs(index, &reports);
            for f in Family::ALL {
                let params = index
                    .cells
                    .iter()
                    .filter(|e| e.backbone == f.key() && e.variant == "baseline")
                    .find_map(|e| reports.get(&e.id))
                    .map_or("-".to_string(), |r| r.summary.params_total.to_string());
                let mut row = vec![f.display_name().to_string(), params];
                for d in DatasetName::ALL {
                    row.push(match ps.iter().find(|p| p.0 == d && p.1 == f) {
                        Some(&(_, _, Some(b), Some(m))) => delta(m, b, d),
                        _ => "-".into(),
                    });
                }
                if row[1..].iter().any(|c| c != "-") {
                    t.push(row);
                }
            }
            t
        }
        Suite::ScaleAblation => {
            let mut t = Table::new("Impact of prompt scales (Fashion-MNIST, ResNet-18)", &["Configuration", "Test Acc (%)", "Params Added"]);
            let mut channels = None;
            for e in &index.cells {
                let Some(r) = reports.get(&e.id) else { continue };
                let d = dataset_of(&e.dataset);
                channels = Some(d.channels());
                let label = match e.variant.rsplit('-').next() {
                    _ if e.variant == "baseline" => "Baseline (no prompts)",
                    Some("g") => "Global only",
                    Some("gm") => "Global + Mid",
                    Some("gml") => "Full (Global+Mid+Local)",
                    _ => e.variant.as_str(),
                };
                t.push(vec![label.into(), pct(r.summary.test_acc, d), r.summary.params_msvp.to_string()]);
            }
            if channels == Some(1) {
                let c3: Vec<String> = [ScaleSet::GLOBAL, ScaleSet::GLOBAL_MID, ScaleSet::FULL]
                    .iter()
                    .map(|&s| count_msvp_params(3, &addition(s)).to_string())
                    .collect();
                t.footer.push(format!(
                    "prompt parameters follow C*(sum of squared scale sides) with the dataset's true C = 1; the reference table lists the C = 3 values {}",
                    c3.join(" / ")
                ));
            }
            t
        }
        Suite::FusionAblation => {
            let mut t = Table::new("Fusion strategy comparison (Fashion-MNIST, ResNet-18)", &["Fusion Type", "Test Acc (%)", "Extra Params"]);
            for e in &index.cells {
                let Some(r) = reports.get(&e.id) else { continue };
                let d = dataset_of(&e.dataset);
                let c = d.channels();
                let kind: FusionKind = e.variant.split('-').nth(1).unwrap_or("addition").parse().map_err(Error::Config)?;
                let base = count_msvp_params(c, &MsvpConfig::default());
                let extra = r.summary.params_msvp - base;
                let label = match kind {
                    FusionKind::Addition => "Addition",
                    FusionKind::Concatenation => "Concatenation",
                    FusionKind::Gated => "Gated",
                };
                let params = if extra == 0 { base.to_string() } else { format!("{base} + {extra}") };
                t.push(vec![label.into(), pct(r.summary.test_acc, d), params]);
            }
            t.footer.push(
                "extra parameters follow the formulas: gated adds C, concatenation adds (1+k)*C*C + C for k enabled scales; \
                 the reference table's 243 + 192 matches no reading of the formula for C = 1 or C = 3 and is not reproduced"
                    .into(),
            );
            t
        }
    };
    t.footer.extend(subset_note(index));
    t.footer.extend(cell_notes(index));
    Ok(t)
}

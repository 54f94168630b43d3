//! Flat `key = value` experiment configuration with dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbones::{BackboneSpec, Family};
use crate::datasets::DatasetName;
use crate::error::{Error, Result};
use crate::msvp::{FusionKind, MsvpConfig, ScaleSet};
use crate::prng;
use crate::trainer::TrainConfig;

/// Every recognized key, in canonical order.
pub const KEYS: &[&str] = &[
    "dataset",
    "backbone",
    "backbone.in_channels",
    "backbone.vit_patch",
    "msvp.enabled",
    "msvp.scales",
    "msvp.s_mid",
    "msvp.s_local",
    "msvp.fusion",
    "msvp.drift_weight",
    "msvp.l2_weight",
    "train.batch_size",
    "train.epochs",
    "train.lr",
    "train.eta_min",
    "train.weight_decay",
    "train.decoupled_weight_decay",
    "train.seed",
    "train.prompt_lr_scale",
    "data.subset",
    "data.test_subset",
    "data.dir",
    "output.dir",
];

/// Keys that locate files rather than define the experiment; they are
/// left out of the canonical text and the config hash.
const LOCATION_KEYS: &[&str] = &["data.dir", "output.dir"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    pub backbone: BackboneSpec,
    pub msvp: Option<MsvpConfig>,
    pub train: TrainConfig,
    /// Cap on the number of official training images used.
    pub subset: Option<usize>,
    /// Cap on the number of official test images evaluated.
    pub test_subset: Option<usize>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetName, backbone: Family, msvp: Option<MsvpConfig>) -> Self {
        ExperimentConfig {
            dataset,
            backbone: BackboneSpec::new(backbone, dataset.channels(), dataset.resolution()),
            msvp,
            train: TrainConfig::for_dataset(dataset),
            subset: None,
            test_subset: None,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        raw.merge_text(text)?;
        raw.resolve()
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut raw = RawConfig::default();
        raw.merge_text(&text)?;
        for o in overrides {
            raw.set_assignment(o)?;
        }
        raw.resolve()
    }

    /// One `key = value` line per key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        self.lines(true)
    }

    /// [`Self::to_text`] without the location keys.
    pub fn canonical_text(&self) -> String {
        self.lines(false)
    }

    pub fn hash(&self) -> u64 {
        prng::fnv1a(self.canonical_text().as_bytes())
    }

    fn lines(&self, with_locations: bool) -> String {
        let m = self.msvp.clone().unwrap_or_default();
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |n| n.to_string());
        let values: Vec<String> = vec![
            self.dataset.key().into(),
            self.backbone.family.key().into(),
            self.backbone.in_channels.to_string(),
            self.backbone.vit.patch.to_string(),
            self.msvp.is_some().to_string(),
            m.enabled.to_string(),
            m.s_mid.to_string(),
            m.s_local.to_string(),
            m.fusion.key().into(),
            format!("{:?}", m.drift_weight),
            format!("{:?}", m.l2_weight),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            format!("{:?}", t.lr),
            format!("{:?}", t.eta_min),
            format!("{:?}", t.adam.weight_decay),
            t.adam.decoupled.to_string(),
            t.seed.to_string(),
            format!("{:?}", t.prompt_lr_scale),
            opt(self.subset),
            opt(self.test_subset),
            self.data_dir.display().to_string(),
            self.output_dir.display().to_string(),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if with_locations || !LOCATION_KEYS.contains(k) {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    /// Every violated constraint, in one pass.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let b = &self.backbone;
        if b.in_channels != self.dataset.channels() {
            out.push(format!(
                "backbone.in_channels = {} but {} images have {} channel(s)",
                b.in_channels,
                self.dataset.key(),
                self.dataset.channels()
            ));
        }
        if b.resolution != self.dataset.resolution() {
            out.push(format!("backbone resolution {} differs from {} ({})", b.resolution, self.dataset.key(), self.dataset.resolution()));
        }
        if let Err(e) = b.validate() {
            out.push(e);
        }
        if let Some(m) = &self.msvp {
            if let Err(e) = m.validate(b.resolution, b.resolution) {
                out.push(e);
            }
        }
        if let Err(e) = self.train.validate() {
            out.push(e);
        }
        if self.subset == Some(0) || self.test_subset == Some(0) {
            out.push("data.subset and data.test_subset must be positive when set".into());
        }
        if let Some(n) = self.subset {
            if n > 0 && n < 10 {
                out.push(format!("data.subset = {n} leaves too few images for a 90/10 split"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Short label such as `baseline` or `msvp-addition-gml`.
    pub fn variant(&self) -> String {
        match &self.msvp {
            None => "baseline".into(),
            Some(m) => format!("msvp-{}-{}", m.fusion.key(), m.enabled.iter().map(|s| s.letter()).collect::<String>()),
        }
    }
}

/// Unresolved key/value pairs; later assignments override earlier ones.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if let Some(prev) = seen.insert(k.clone(), n + 1) {
                        problems.push(format!("line {}: `{k}` already set on line {prev}", n + 1));
                    }
                    self.values.insert(k, v.trim().to_string());
                }
                None => problems.push(format!("line {}: expected `key = value`, got `{line}`", n + 1)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Apply one `key=value` override.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut problems: Vec<String> = self
            .values
            .keys()
            .filter(|k| !KEYS.contains(&k.as_str()))
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        let get = |key: &str| self.values.get(key).map(String::as_str);

        let dataset = match get("dataset") {
            None => {
                problems.push("`dataset` is required".into());
                None
            }
            Some(v) => note(&mut problems, "dataset", v.parse::<DatasetName>()),
        };
        let family = match get("backbone") {
            None => {
                problems.push("`backbone` is required".into());
                None
            }
            Some(v) => note(&mut problems, "backbone", v.parse::<Family>()),
        };
        let (Some(dataset), Some(family)) = (dataset, family) else {
            return Err(Error::Config(problems.join("; ")));
        };

        let mut cfg = ExperimentConfig::new(dataset, family, None);
        macro_rules! p {
            ($key:expr) => {
                parse_opt(&mut problems, $key, get($key))
            };
        }

        if let Some(c) = p!("backbone.in_channels") {
            cfg.backbone.in_channels = c;
        }
        if let Some(patch) = p!("backbone.vit_patch") {
            cfg.backbone.vit.patch = patch;
        }
        let mut m = MsvpConfig::default();
        let enabled: bool = p!("msvp.enabled").unwrap_or(false);
        if let Some(v) = p!("msvp.scales").map(|v: ScaleSet| v) {
            m.enabled = v;
        }
        if let Some(v) = p!("msvp.s_mid") {
            m.s_mid = v;
        }
        if let Some(v) = p!("msvp.s_local") {
            m.s_local = v;
        }
        if let Some(v) = p!("msvp.fusion").map(|v: FusionKind| v) {
            m.fusion = v;
        }
        if let Some(v) = p!("msvp.drift_weight") {
            m.drift_weight = v;
        }
        if let Some(v) = p!("msvp.l2_weight") {
            m.l2_weight = v;
        }
        cfg.msvp = enabled.then_some(m);

        let t = &mut cfg.train;
        if let Some(v) = p!("train.batch_size") {
            t.batch_size = v;
        }
        match get("train.epochs") {
            None | Some("auto") => {}
            Some(_) => {
                if let Some(v) = p!("train.epochs") {
                    t.epochs = v;
                }
            }
        }
        if let Some(v) = p!("train.lr") {
            t.lr = v;
        }
        if let Some(v) = p!("train.eta_min") {
            t.eta_min = v;
        }
        if let Some(v) = p!("train.weight_decay") {
            t.adam.weight_decay = v;
        }
        if let Some(v) = p!("train.decoupled_weight_decay") {
            t.adam.decoupled = v;
        }
        if let Some(v) = p!("train.seed") {
            t.seed = v;
        }
        if let Some(v) = p!("train.prompt_lr_scale") {
            t.prompt_lr_scale = v;
        }
        for (key, slot) in [("data.subset", &mut cfg.subset), ("data.test_subset", &mut cfg.test_subset)] {
            match get(key) {
                None | Some("none") => {}
                Some(_) => *slot = p!(key),
            }
        }
        if let Some(v) = get("data.dir") {
            cfg.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("output.dir") {
            cfg.output_dir = PathBuf::from(v);
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn note<T>(problems: &mut Vec<String>, key: &str, r: std::result::Result<T, String>) -> Option<T> {
    r.map_err(|e| problems.push(format!("{key}: {e}"))).ok()
}

fn parse_opt<T: FromStr>(problems: &mut Vec<String>, key: &str, raw: Option<&str>) -> Option<T>
where
    T::Err: std::fmt::Display,
{
    let raw = raw?;
    match raw.parse::<T>() {
        Ok(v) => Some(v),
        Err(e) => {
            problems.push(format!("{key}: cannot parse `{raw}`: {e}"));
            None
        }
    }
}

use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::run::{prepare_data, VAL_FRACTION};
use crate::backbones::Model;
use crate::datasets::{normalize, split, AugmentPolicy, Pipeline, Stats};
use crate::error::{Error, Result};
use crate::evaluation::{self, GradCamMap};
use crate::trainer::Checkpoint;

/// A trained model rebuilt from a checkpoint, with the normalization
/// statistics of its training split.
pub struct Restored {
    pub config: ExperimentConfig,
    pub model: Model,
    pub stats: Stats,
}

/// Rebuild the model described by a checkpoint's embedded configuration
/// and load its weights. Statistics are read from (or cached into) the
/// checkpoint's directory. The returned test set is the full official one.
pub fn restore(checkpoint: &Path, data_dir: &Path) -> Result<(Restored, crate::datasets::DataBundle)> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut config = ExperimentConfig::parse(&ck.meta.config)?;
    config.data_dir = data_dir.to_path_buf();
    config.test_subset = None;
    let data = prepare_data(&config)?;
    let seed = config.train.seed;
    let parts = split::split(data.train.len(), 1.0 - VAL_FRACTION, seed);
    let cache = checkpoint.parent().unwrap_or(Path::new("."));
    let stats = normalize::load_or_compute(cache, &data.train, &parts.train, seed, config.subset)?;
    let mut model = Model::build(config.backbone, config.msvp.clone(), seed)?;
    ck.restore(&mut model.store, "")?;
    Ok((Restored { config, model, stats }, data))
}

/// GradCAM maps for test-set `indices`, targeting `class` or, if absent,
/// each image's predicted class. Writes `gradcam_<index>_c<class>.{pgm,txt}`.
pub fn gradcam_from_checkpoint(
    checkpoint: &Path,
    data_dir: &Path,
    indices: &[usize],
    class: Option<usize>,
    layer: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<(usize, GradCamMap, Vec<PathBuf>)>> {
    let (r, data) = restore(checkpoint, data_dir)?;
    let test = &data.test;
    let pipeline = Pipeline { data: test, stats: &r.stats, policy: AugmentPolicy::none(), seed: 0 };
    let mut out = Vec::new();
    for &i in indices {
        if i >= test.len() {
            return Err(Error::Config(format!("test index {i} outside [0, {})", test.len())));
        }
        let x = pipeline.batch(&[i]);
        let target = match class {
            Some(c) => c,
            None => evaluation::argmax(r.model.logits(x.clone())?.data()),
        };
        let map = evaluation::gradcam(&r.model, x, target, layer)?;
        let files = map.write(out_dir, &format!("gradcam_{i}_c{target}"))?;
        out.push((i, map, files));
    }
    Ok(out)
}

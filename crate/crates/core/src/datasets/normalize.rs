use std::path::{Path, PathBuf};

use super::{Dataset, DatasetName};
use crate::error::DataError;

/// Per-channel mean and standard deviation of pixel values scaled to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

impl Stats {
    pub fn identity(channels: usize) -> Self {
        Stats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.mean.len() != self.std.len() {
            return Err(DataError::Invalid(format!("{} means for {} deviations", self.mean.len(), self.std.len())));
        }
        match self.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
            Some(channel) => Err(DataError::ZeroStd { channel }),
            None => Ok(()),
        }
    }

    /// `(v / 255 - mean[c]) / std[c]` for a planar image.
    pub fn normalize(&self, pixels: &[f32], out: &mut [f32]) {
        let plane = pixels.len() / self.mean.len();
        for (c, (src, dst)) in pixels.chunks_exact(plane).zip(out.chunks_exact_mut(plane)).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = ((v as f64 / 255.0 - m) / s) as f32;
            }
        }
    }

    pub fn to_text(&self, name: DatasetName, seed: u64, samples: usize) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
        format!(
            "dataset = {name}\nseed = {seed}\nsamples = {samples}\nmean = {}\nstd = {}\n",
            join(&self.mean),
            join(&self.std)
        )
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let field = |key: &str| -> Result<Vec<f64>, String> {
            let line = text
                .lines()
                .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v))
                .ok_or_else(|| format!("missing `{key}`"))?;
            line.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{key}`: {e}"))).collect()
        };
        Ok(Stats { mean: field("mean")?, std: field("std")? })
    }
}

/// Channel statistics over the pixels of `indices`, accumulated in 64-bit
/// and rounded to six decimals. The deviation is the population value.
pub fn compute_stats(ds: &Dataset, indices: &[usize]) -> Stats {
    let plane = ds.height * ds.width;
    let mut sum = vec![0f64; ds.channels];
    let mut sq = vec![0f64; ds.channels];
    for &i in indices {
        for (c, px) in ds.image(i).chunks_exact(plane).enumerate() {
            let mut s = 0u64;
            let mut q = 0u64;
            for &p in px {
                s += p as u64;
                q += (p as u64) * (p as u64);
            }
            sum[c] += s as f64;
            sq[c] += q as f64;
        }
    }
    let n = (indices.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n / 255.0).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n / (255.0 * 255.0) - m * m).max(0.0).sqrt())
        .collect::<Vec<f64>>();
    Stats { mean: mean.into_iter().map(round6).collect(), std: std.into_iter().map(round6).collect() }
}

pub fn cache_path(dir: &Path, name: DatasetName, seed: u64, subset: Option<usize>) -> PathBuf {
    match subset {
        None => dir.join(format!("stats.{name}.{seed}.txt")),
        Some(n) => dir.join(format!("stats.{name}.{seed}.subset{n}.txt")),
    }
}

/// Read cached statistics, or compute them over `indices` and write the cache.
pub fn load_or_compute(
    cache_dir: &Path,
    ds: &Dataset,
    indices: &[usize],
    seed: u64,
    subset: Option<usize>,
) -> Result<Stats, DataError> {
    let path = cache_path(cache_dir, ds.name, seed, subset);
    if let Ok(text) = std::fs::read_to_string(&path) {
        let stats = Stats::parse(&text).map_err(|detail| DataError::Format { path: path.clone(), detail })?;
        stats.validate()?;
        return Ok(stats);
    }
    let stats = compute_stats(ds, indices);
    stats.validate()?;
    std::fs::create_dir_all(cache_dir).map_err(|source| DataError::Io { path: cache_dir.to_owned(), source })?;
    std::fs::write(&path, stats.to_text(ds.name, seed, indices.len()))
        .map_err(|source| DataError::Io { path: path.clone(), source })?;
    Ok(stats)
}

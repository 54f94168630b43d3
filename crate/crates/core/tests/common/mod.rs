#![allow(dead_code)]

use std::path::PathBuf;

use msvp_core::datasets::{self, DataBundle, DatasetName};
use numcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// `MSVP_DATA_DIR`, else the workspace `data/` directory.
pub fn data_root() -> PathBuf {
    std::env::var_os("MSVP_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn load(name: DatasetName) -> DataBundle {
    let root = data_root();
    datasets::load(name, &root)
        .unwrap_or_else(|e| panic!("{name} must be present under {} (set MSVP_DATA_DIR): {e}", root.display()))
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn uniform_f64(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn uniform_f32(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

pub fn bits(xs: &[f32]) -> Vec<u32> {
    xs.iter().map(|v| v.to_bits()).collect()
}

/// Half-pixel-centre bilinear sampling of one `h x w` plane, written per
/// output pixel from the coordinate formula.
pub fn bilinear_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |i: usize, n: usize, m: usize| {
        let x = ((i as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = x.floor() as usize;
        (lo, (lo + 1).min(n - 1), x - lo as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let (y0, y1, fy) = coord(i, h, oh);
        for j in 0..ow {
            let (x0, x1, fx) = coord(j, w, ow);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

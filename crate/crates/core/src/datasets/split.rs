use crate::prng::{self, Purpose};

/// A seeded partition of a training set into train and validation indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seed: u64,
}

/// Split `0..n`: a seeded permutation whose first part becomes the training
/// indices and whose last `round((1 - ratio) * n)` entries the validation set.
pub fn split(n: usize, ratio: f64, seed: u64) -> SplitIndices {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio {ratio} outside (0, 1)");
    let mut rng = prng::stream(seed, Purpose::Split, 0, 0);
    let mut perm = prng::permutation(n, &mut rng);
    // 1 - 0.9 is slightly below 0.1 in binary; snap it so halves round up
    let val_frac = ((1.0 - ratio) * 1e12).round() / 1e12;
    let n_val = (val_frac * n as f64).round() as usize;
    let val = perm.split_off(n - n_val);
    SplitIndices { train: perm, val, seed }
}

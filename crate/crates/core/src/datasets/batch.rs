use numcore::Tensor;

use super::{augment, AugmentPolicy, Dataset, Stats};
use crate::prng::{self, Purpose};

/// Turns dataset indices into normalized `[N, C, H, W]` batches, with
/// optional per-sample augmentation keyed by `(seed, epoch, index)`.
pub struct Pipeline<'a> {
    pub data: &'a Dataset,
    pub stats: &'a Stats,
    pub policy: AugmentPolicy,
    pub seed: u64,
}

impl<'a> Pipeline<'a> {
    /// Batch without augmentation.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        self.build(indices, None)
    }

    /// Batch augmented for `epoch`.
    pub fn augmented(&self, indices: &[usize], epoch: usize) -> Tensor<f32> {
        self.build(indices, Some(epoch))
    }

    fn build(&self, indices: &[usize], epoch: Option<usize>) -> Tensor<f32> {
        let d = self.data;
        let len = d.image_len();
        let mut out = vec![0f32; indices.len() * len];
        let mut raw = vec![0f32; len];
        for (dst, &i) in out.chunks_exact_mut(len).zip(indices) {
            raw.iter_mut().zip(d.image(i)).for_each(|(r, &p)| *r = p as f32);
            match epoch {
                Some(e) if !self.policy.is_identity() => {
                    let mut rng = prng::stream(self.seed, Purpose::Augment, e as u64, i as u64);
                    let aug = augment::augment(&raw, d.channels, d.height, d.width, &self.policy, &mut rng);
                    self.stats.normalize(&aug, dst);
                }
                _ => self.stats.normalize(&raw, dst),
            }
        }
        Tensor::new(&[indices.len(), d.channels, d.height, d.width], out).expect("batch shape")
    }
}

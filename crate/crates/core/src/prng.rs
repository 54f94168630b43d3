//! Purpose-keyed random streams.
//!
//! Every random draw comes from a xoshiro256++ generator whose 256-bit state
//! is derived from `(seed, purpose, epoch, index)` by SplitMix64. Streams for
//! different purposes or keys never coincide, and the sequence produced for a
//! key does not depend on the platform or on how many other streams exist.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Prng = Xoshiro256PlusPlus;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Split,
    Shuffle,
    Augment,
    Subset,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x494e_4954,
            Purpose::Split => 0x5350_4c54,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::Augment => 0x4155_474d,
            Purpose::Subset => 0x5355_4253,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one `(seed, purpose, epoch, index)` key.
pub fn stream(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> Prng {
    let mut s = seed;
    let mut key = splitmix64(&mut s);
    for word in [purpose.tag(), epoch, index] {
        key ^= word;
        let mut t = key;
        key = splitmix64(&mut t);
    }
    let mut state = [0u8; 32];
    let mut t = key;
    for chunk in state.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut t).to_le_bytes());
    }
    Prng::from_seed(state)
}

/// FNV-1a hash, used to key per-parameter initialization streams by name.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut Prng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// A uniformly random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Prng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    shuffle(&mut p, rng);
    p
}

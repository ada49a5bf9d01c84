//! Seed ladder: every random draw comes from a stream derived from the root
//! seed plus a fixed tuple of tags, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    EpisodeStart = 2,
    Act = 3,
    Assess = 4,
    Matching = 5,
    Minibatch = 6,
    Adversary = 7,
    CrossValidation = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(root: u64, purpose: Purpose, tags: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(tags.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(tags);
    ChaCha8Rng::seed_from_u64(derive_seed(root, &all))
}

//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a seed derived from one top-level seed and a stage tag, so each
//! stage can be rerun on its own and still see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a stage name (FNV-1a of the name,
/// folded through a splitmix finalizer).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(seed.wrapping_add(GOLDEN) ^ h)
}

/// Derive the seed of the `index`-th member of a family (restarts, stages).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_get_distinct_seeds() {
        let a = derive_seed(7, "kmeans");
        let b = derive_seed(7, "reduce");
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, "kmeans"));
        assert_ne!(derive_indexed(1, 0), derive_indexed(1, 1));
    }
}

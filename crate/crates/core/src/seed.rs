//! Hierarchical seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! 64-bit seed. Child seeds are derived from a parent seed and a stream
//! index, so a run seed can be split into row, step, or cell sub-seeds
//! without depending on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `index` of `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    mix(mix(parent.wrapping_add(GOLDEN_GAMMA)) ^ index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1))
}

/// Derives a seed from a path of stream indices.
pub fn derive_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |s, &i| derive(s, i))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ_from_each_other_and_parent() {
        let kids: Vec<u64> = (0..64).map(|i| derive(7, i)).collect();
        let mut sorted = kids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), kids.len());
        assert!(!kids.contains(&7));
    }

    #[test]
    fn derive_is_pure() {
        assert_eq!(derive(1, 2), derive(1, 2));
        assert_eq!(
            derive_path(5, &[1, 2, 3]),
            derive(derive(derive(5, 1), 2), 3)
        );
    }
}

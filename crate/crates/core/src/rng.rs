//! Deterministic seed derivation.
//!
//! Every random draw in the crate flows from an explicit `u64` seed through
//! a ChaCha stream. Sub-seeds for independent components (domains, restarts,
//! training steps) are derived by hashing the parent seed with a textual tag
//! and an index, so adding a component never shifts the streams of the
//! others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream cipher RNG used everywhere; fixed choice keeps runs reproducible
/// across platforms.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from `(seed, tag, index)` with an FNV-style mix.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |byte: u8| {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        absorb(b);
    }
    for b in tag.bytes() {
        absorb(b);
    }
    for b in index.to_le_bytes() {
        absorb(b);
    }
    // final avalanche (splitmix64 tail)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub fn derived_rng(seed: u64, tag: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "domain", 0), derive_seed(7, "domain", 0));
        assert_ne!(derive_seed(7, "domain", 0), derive_seed(7, "domain", 1));
        assert_ne!(derive_seed(7, "domain", 0), derive_seed(7, "restart", 0));
        assert_ne!(derive_seed(7, "domain", 0), derive_seed(8, "domain", 0));
    }

    #[test]
    fn rng_streams_repeat_per_seed() {
        use rand::Rng as _;
        let mut a = derived_rng(42, "x", 3);
        let mut b = derived_rng(42, "x", 3);
        let va: Vec<f64> = (0..8).map(|_| a.gen()).collect();
        let vb: Vec<f64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(va, vb);
    }
}

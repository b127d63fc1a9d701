//! Repo-wide seeded random number generation.
//!
//! Every randomized step (parameter init, epoch shuffles, synthetic cohorts,
//! fold splits) draws from a ChaCha8 stream derived here, so results are
//! reproducible and identical across platforms for the same seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep independent consumers of the same user seed from
/// sharing a stream.
pub mod purpose {
    pub const PARAM_INIT: u64 = 1;
    pub const EPOCH_SHUFFLE: u64 = 2;
    pub const SYNTH: u64 = 3;
    pub const SYNTH_CALIBRATE: u64 = 4;
    pub const FOLD_SPLIT: u64 = 5;
    pub const VALIDATION_CARVE: u64 = 6;
    pub const DEEPR_SEQUENCE: u64 = 7;
    pub const FOLD_TRAIN: u64 = 8;
    pub const GRADCHECK: u64 = 9;
}

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a user seed with a purpose tag and an index (epoch, fold, ...) into
/// a single derived seed.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose)) ^ splitmix64(index))
}

/// The repo-wide generator: ChaCha8 seeded from a derived seed.
pub fn derive_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

/// FNV-1a over a string, for mixing identifiers (e.g. patient ids) into
/// seed derivations.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn derived_streams_differ_by_purpose() {
        let mut a = derive_rng(42, purpose::PARAM_INIT, 0);
        let mut b = derive_rng(42, purpose::EPOCH_SHUFFLE, 0);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn derivation_is_stable() {
        // Frozen: a change here silently invalidates every seeded artifact.
        assert_eq!(derive_seed(42, purpose::SYNTH, 0), derive_seed(42, purpose::SYNTH, 0));
        let mut r1 = derive_rng(7, purpose::FOLD_SPLIT, 3);
        let mut r2 = derive_rng(7, purpose::FOLD_SPLIT, 3);
        assert_eq!(r1.next_u64(), r2.next_u64());
    }

    #[test]
    fn hash_str_distinguishes_ids() {
        assert_ne!(hash_str("P0001"), hash_str("P0002"));
        assert_eq!(hash_str(""), 0xcbf2_9ce4_8422_2325);
    }
}

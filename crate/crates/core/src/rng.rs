//! Seeding. Every simulation instance owns one ChaCha8 generator whose seed
//! is derived from a master seed and the instance index, so results do not
//! depend on which worker thread ran which instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Mixes `(master, index)` into a well-spread 64-bit sub-seed (SplitMix64
/// finalizer applied twice).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn instance_rng(master: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(master, index))
}

//! Seed derivation. Every random consumer gets its own ChaCha stream derived
//! from one user seed, so components can be varied independently and results
//! never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the named sub-stream `name` (e.g. `"dataset"`, `"init"`).
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    name.bytes()
        .fold(splitmix64(seed), |h, b| splitmix64(h ^ u64::from(b)))
}

/// Mixes a seed with an integer key such as a trial or chunk index.
pub fn keyed_seed(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Generator for `(seed, key)`.
pub fn keyed_rng(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed_seed(seed, key))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

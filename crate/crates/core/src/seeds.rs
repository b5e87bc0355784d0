//! Deterministic seed derivation so parallel workers never share an rng stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a master seed and a path of indices into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

//! Deterministic seed fan-out.
//!
//! A run has a single global seed. Each subsystem derives its own stream by
//! hashing the global seed together with a fixed name, so adding a new
//! consumer never perturbs the streams of existing ones.

use rand::rngs::StdRng;
use rand::SeedableRng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the subsystem called `name`.
pub fn derive_seed(global: u64, name: &str) -> u64 {
    mix64(global ^ mix64(fnv1a(name)))
}

/// Seed for the `index`-th member of a family (actor `i`, episode `n`, ...).
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_for(global: u64, name: &str) -> StdRng {
    StdRng::seed_from_u64(derive_seed(global, name))
}

/// Uniform value in `[0, 1)` from a hash, used for stable dataset splits.
pub fn unit_from_hash(h: u64) -> f64 {
    (mix64(h) >> 11) as f64 / (1u64 << 53) as f64
}

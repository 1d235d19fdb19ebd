//! Seed derivation.
//!
//! A run has one master seed. Each consumer (weight init, data generation,
//! shuffling, dropout, ...) gets its own stream seed
//! `splitmix64(master ^ fnv1a64(name))`, so adding a new consumer never
//! perturbs the streams of existing ones. Indexed sub-streams (per sample,
//! per epoch) chain [`derive_indexed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed of the named component stream.
pub fn derive(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

/// Seed of the `index`-th sub-stream of `parent`.
pub fn derive_indexed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

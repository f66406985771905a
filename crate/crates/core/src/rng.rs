//! Seeded RNG construction and per-purpose seed derivation.
//!
//! Every source of randomness in the engine (weight init, batch shuffling,
//! timestep sampling, attack noise) draws from its own stream derived from
//! the run seed, so adding or removing one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive_seed`]. Each consumer owns one tag.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const TIMESTEP: u64 = 0x03;
    pub const ATTACK: u64 = 0x04;
    pub const EVAL: u64 = 0x05;
    pub const DATA: u64 = 0x06;
    pub const MATRIX: u64 = 0x07;
    pub const SURFACE: u64 = 0x08;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent seed from `(base, tag, a, b)`.
pub fn derive_seed(base: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(base ^ splitmix64(tag));
    s = splitmix64(s ^ a);
    splitmix64(s ^ b)
}

/// Deterministic RNG for a derived seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

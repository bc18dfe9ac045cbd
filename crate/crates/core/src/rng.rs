//! Seeded xoshiro256** streams.
//!
//! A component stream is the root generator advanced by `index` long jumps (2^192 steps
//! each), so streams never overlap and do not depend on how much another stream was used.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// Fixed stream indices for the components that draw randomness.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const TELEPORT: u64 = 2;
    pub const METRICS: u64 = 3;
    pub const DATA: u64 = 4;
    pub const THEORY: u64 = 5;
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = seeded(seed);
    for _ in 0..index {
        rng.long_jump();
    }
    rng
}

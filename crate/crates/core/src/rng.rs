//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)` and split into independent streams by purpose. Uniform
//! reals use the top 53 bits of a `u64` draw, so a given (seed, stream) produces
//! the same sequence on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids used by the pipeline. Keeping them fixed keeps old seeds valid.
pub mod streams {
    pub const TRIAL_U: u64 = 1;
    pub const TRIAL_P: u64 = 2;
    pub const BOUNDARY: u64 = 16;
    pub const TEST_SUBSET: u64 = 32;
    pub const VALIDATION: u64 = 64;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
#[inline]
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

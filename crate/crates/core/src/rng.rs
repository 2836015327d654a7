//! Deterministic randomness.
//!
//! Everything stochastic in the crate draws from a counter-based ChaCha8
//! stream seeded explicitly. Conversion to floats and shuffling are written
//! out here rather than taken from a distributions crate so that the exact
//! byte-for-byte behavior is pinned by this code and its tests.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The crate-wide PRNG.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform f64 in [0, 1): the top 53 bits of one u64 draw.
pub fn uniform53(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform f64 in [lo, hi).
pub fn uniform_in(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + uniform53(rng) * (hi - lo)
}

/// Uniform integer in [0, n) by rejection, avoiding modulo bias.
/// `n` must be nonzero.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0, "below(_, 0)");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX - n + 1) % n;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return (x % n) as usize;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Xavier uniform initialization: `count` draws from
/// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize, count: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| uniform_in(rng, -bound, bound)).collect()
}

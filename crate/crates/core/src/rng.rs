//! Seeded random number helpers.
//!
//! Everything in the pipeline that draws randomness goes through a
//! [`ChaCha8Rng`] seeded from an explicit `u64`, so any artifact is a pure
//! function of its seeds. Gaussian draws use Box–Muller directly instead of a
//! distribution crate to keep the byte stream under our control.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A deterministic RNG for the given seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic RNG derived from a base seed and a stream label.
///
/// Used to give independent substreams to e.g. each dataset sample without
/// correlating them or depending on generation order.
pub fn substream(seed: u64, label: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(label.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .rotate_left(31);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Standard normal draw via Box–Muller.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Avoid ln(0).
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 1e-300 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Vector of standard normal draws.
pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

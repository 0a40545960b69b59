//! Fixed, documented random number machinery.
//!
//! Two primitives are used across the crate and must stay bit-stable:
//!
//! * [`mix64`]: the SplitMix64 output function. Stateless draws such as
//!   bucket selection are `mix64(seed ^ mix64(step + 1))`, so every rank that
//!   shares a seed computes the same value for a given step without any
//!   coordination.
//! * [`DataRng`]: xoshiro256++ seeded through SplitMix64 (the reference
//!   `seed_from_u64` expansion). Uniform floats take the top 53 bits.
//!
//! Normal and gamma variates are derived here with explicit algorithms
//! (Box-Muller, cosine branch only; Marsaglia-Tsang) instead of a library
//! distribution, so their output is pinned by this crate.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `x + golden_gamma`.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic hash of `(seed, step)`.
#[inline]
pub fn hash_step(seed: u64, step: u64) -> u64 {
    mix64(seed ^ mix64(step.wrapping_add(1)))
}

/// Derives an independent child seed, e.g. per rank.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed).wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA)))
}

/// Maps a 64-bit hash to `[0, n)` by multiply-high.
#[inline]
pub fn bounded(hash: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    ((hash as u128 * n as u128) >> 64) as usize
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(hash: u64) -> f64 {
    (hash >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub struct DataRng {
    inner: Xoshiro256PlusPlus,
}

impl DataRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform in `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(shape, scale) by Marsaglia-Tsang. Shapes below one use the
    /// `G(a) = G(a + 1) * U^(1/a)` boost.
    pub fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0, 1.0);
            let u = self.uniform_open0();
            return g * u.powf(1.0 / shape) * scale;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let (x, v) = loop {
                let x = self.normal();
                let v = 1.0 + c * x;
                if v > 0.0 {
                    break (x, v * v * v);
                }
            };
            let u = self.uniform_open0();
            if u < 1.0 - 0.0331 * x * x * x * x || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v * scale;
            }
        }
    }
}

//! Seeded, portable randomness.
//!
//! Streams are ChaCha8 keyed by a SplitMix64 hash of `(root seed, tags…)`.
//! Gaussians come from Box–Muller over 53-bit uniforms rather than a
//! platform-tuned sampler, so any implementation of the same scheme
//! reproduces the exact trace from the same seed. Golden-file tests rely
//! on this.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_NEG53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a substream seed from a root seed and a tag path.
///
/// Tag paths are documented at each call site (for example
/// `(seed, DISTURBANCE)` for a disturbance trace, `(seed, PREDICTION, t, i)`
/// for the prediction-noise draw at pair `(t, i)`). Distinct paths give
/// independent streams; identical paths reproduce bit-identical draws.
pub fn split_seed(root: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(root);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// Stream tags used across the crate, kept here so they never collide.
pub mod stream {
    pub const COSTS: u64 = 1;
    pub const DISTURBANCE: u64 = 2;
    pub const INITIAL_STATE: u64 = 3;
    pub const PREDICTION: u64 = 4;
}

/// Deterministic random stream. A thin wrapper so call sites never touch the
/// generator choice directly.
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(root: u64, tags: &[u64]) -> Self {
        Stream(ChaCha8Rng::seed_from_u64(split_seed(root, tags)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller. Consumes exactly two uniforms and
    /// discards the paired sine draw, which keeps the stream position a pure
    /// function of the number of samples requested.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }
}

//! Seed-reproducible random number streams.
//!
//! Every stochastic component of the crate draws from a [`SplitRng`], a thin
//! wrapper over the ChaCha8 counter-mode generator. A master seed plus a
//! stream tag deterministically identifies a stream, so independent parts of
//! an experiment (training phases, Monte-Carlo points, sweep cells) can run
//! in any order — or in parallel — without perturbing each other's draws.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes a 64-bit value through the SplitMix64 finalizer.
///
/// Used to derive child seeds: statistically independent outputs for distinct
/// inputs, and stable across platforms.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a stream tag.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    mix64(master ^ mix64(tag))
}

/// Deterministic random stream (ChaCha8, 64-bit seeded).
#[derive(Clone, Debug)]
pub struct SplitRng {
    inner: ChaCha8Rng,
    /// Cached second Gaussian draw from the polar method.
    spare_gaussian: Option<f64>,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_gaussian: None,
        }
    }

    /// A child stream for the given tag; independent of the parent's position.
    pub fn split(&self, seed: u64, tag: u64) -> Self {
        Self::new(derive_seed(seed, tag))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1), 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// A fair bit as 0/1.
    #[inline]
    pub fn bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Standard Gaussian via the Marsaglia polar method.
    ///
    /// Two independent draws are produced per accepted point; the second is
    /// cached so consecutive calls consume the underlying stream in a fixed,
    /// platform-independent order.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_gaussian = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// Fills a slice with i.i.d. N(0, sigma^2) draws.
    pub fn fill_gaussian(&mut self, out: &mut [f64], sigma: f64) {
        for x in out.iter_mut() {
            *x = sigma * self.gaussian();
        }
    }

    /// Fills a slice with i.i.d. fair bits encoded as 0.0/1.0.
    pub fn fill_bits(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.bit() as f64;
        }
    }
}

//! Deterministic random number generation.
//!
//! Every randomized procedure in this workspace (weight init, training batches,
//! synthetic inputs) draws from [`DetRng`], a ChaCha8 stream keyed by a `u64`
//! seed. The same seed always yields the same stream on every platform, which
//! is what makes trace files and training runs byte-reproducible.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::real::Real;

/// Seeded, platform-independent RNG with the sampling helpers the toolkit needs.
#[derive(Debug, Clone)]
pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream, e.g. one per layer or per training job.
    pub fn fork(&mut self, tag: u64) -> Self {
        let mixed = self.inner.next_u64() ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` via the multiply-shift reduction.
    pub fn uniform_usize(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.inner.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller. Sampling happens in `f64` and is
    /// rounded once to the target precision.
    pub fn standard_normal<T: Real>(&mut self) -> T {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform_f64();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        T::from_f64(radius * libm::cos(2.0 * core::f64::consts::PI * u2))
    }

    pub fn normal_vec<T: Real>(&mut self, len: usize) -> Vec<T> {
        (0..len).map(|_| self.standard_normal()).collect()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_usize(i + 1);
            items.swap(i, j);
        }
    }
}

//! Deterministic hierarchical random-number streams.
//!
//! Every random draw in the crate is keyed by a [`Seed`]: a root value plus a
//! hierarchical stream path built with [`Seed::child`]. Identical
//! `(root, path)` pairs produce bit-identical sequences on every platform and
//! in every run, which makes whole experiments reproducible and lets
//! independent streams (per particle, per step, per purpose) be carved out of
//! one root seed without coordination.
//!
//! The stream cipher is ChaCha8 keyed by a SplitMix64 hash of the path, so
//! sibling streams are statistically independent.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::fmath;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of one deterministic random stream.
///
/// The `chain` field is a running hash of the hierarchical stream path; two
/// seeds with the same root and the same path of `child` ids are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed {
    root: u64,
    chain: u64,
}

impl Seed {
    pub fn new(root: u64) -> Self {
        let mut st = root ^ 0x6a09_e667_f3bc_c908;
        let chain = splitmix64(&mut st);
        Seed { root, chain }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Derives the sub-stream with the given id. Different ids at the same
    /// level, or the same id at different levels, give independent streams.
    #[must_use]
    pub fn child(&self, id: u64) -> Self {
        let mut st = self.chain ^ id.wrapping_mul(GOLDEN_GAMMA) ^ 0x510e_527f_ade6_82d1;
        Seed {
            root: self.root,
            chain: splitmix64(&mut st),
        }
    }

    /// Instantiates the generator for this stream.
    pub fn rng(&self) -> StreamRng {
        let mut st = self.chain ^ self.root.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut st).to_le_bytes());
        }
        StreamRng {
            inner: ChaCha8Rng::from_seed(key),
            spare_normal: None,
        }
    }
}

/// Counter-based generator for one stream.
pub struct StreamRng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl StreamRng {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via Box-Muller (software transcendentals, so the
    /// mapping from cipher output to sample is platform-independent).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = fmath::sqrt(-2.0 * fmath::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * fmath::sin(theta));
        r * fmath::cos(theta)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// Draws a `rows x cols` row-major matrix of independent standard normal
/// samples, fully determined by the seed.
pub fn draw_standard_normal(seed: &Seed, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    let mut out = alloc::vec![0.0; rows * cols];
    rng.fill_normal(&mut out);
    out
}

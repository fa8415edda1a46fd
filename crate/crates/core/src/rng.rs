//! Deterministic random number generation.
//!
//! Two flavours are used throughout the crate:
//!
//! * [`Stream`] — a sequential SplitMix64 stream for parameter
//!   initialization and patch sampling, where draw order is part of the
//!   reproducibility contract.
//! * [`keyed_normal_pair`] — counter-based generation keyed by
//!   `(seed, index)`, so per-voxel noise fields can be evaluated in any
//!   order (or in parallel) and still be bit-identical to a sequential
//!   sweep.

// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

#[inline]
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of entropy.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased uniform integer in `[0, n)` via rejection sampling.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller (consumes two draws).
    pub fn next_normal(&mut self) -> f64 {
        let (a, b) = normal_pair_from(self.next_u64(), self.next_u64());
        // the second variate is discarded to keep the stream contract simple
        let _ = b;
        a
    }
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // (0, 1]: never 0 so ln() below is finite
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn normal_pair_from(bits1: u64, bits2: u64) -> (f64, f64) {
    let u1 = to_open_unit(bits1);
    let u2 = to_open_unit(bits2);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * core::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Two independent standard normals for `(seed, index)`, order-free.
pub fn keyed_normal_pair(seed: u64, index: u64) -> (f64, f64) {
    let base = splitmix64(seed ^ 0x6A09_E667_F3BC_C909).wrapping_add(index);
    let b1 = splitmix64(base);
    let b2 = splitmix64(base ^ 0xD134_2543_DE82_EF95);
    normal_pair_from(b1, b2)
}

//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is filled by
//! SplitMix64 from a 64-bit key (`Xoshiro256PlusPlus::seed_from_u64`). The key
//! for stream `s` under run seed `seed` is `splitmix64(seed ^ splitmix64(s))`,
//! so streams are independent values with no shared state.
//!
//! Uniform doubles take the top 53 bits of a draw: `[0,1)` uses `k * 2^-53`,
//! the open interval `(0,1)` uses `(k + 0.5) * 2^-53`.

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream indices used by the toolkit. Keeping them in one place guarantees
/// that two consumers never share a stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const BOUNDARY: u64 = 2;
    pub const RESIDUAL: u64 = 3;
    pub const ANCHOR: u64 = 4;
}

/// Seed for draw `index` (e.g. an outer iteration) of stream `stream`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of run seed `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(stream)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform in `(lo, hi)`. The affine map can round onto an endpoint for
    /// very narrow intervals, so such draws are rejected.
    pub fn open_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let x = lo + (hi - lo) * self.open_unit();
            if x > lo && x < hi {
                return x;
            }
        }
    }
}

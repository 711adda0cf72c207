//! Seeded, splittable random streams.
//!
//! A stream is ChaCha12 keyed by `seed` (expanded through `seed_from_u64`)
//! with the 64-bit ChaCha stream word set to `stream_id`. Streams with the
//! same `(seed, stream_id)` pair produce identical sequences on every platform;
//! distinct stream ids share a key but never overlap.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Stream-id assignments derived from a single run seed.
pub mod streams {
    /// Cohort-level draws (user profile parameters).
    pub const COHORT: u64 = 1;
    /// Train-set partitioning.
    pub const PARTITION: u64 = 2;
    /// Server-side choices (party sampling).
    pub const SERVER: u64 = 3;
    /// Initial model parameters.
    pub const INIT: u64 = 4;

    const USER_BASE: u64 = 1 << 32;
    const PARTY_BASE: u64 = 2 << 32;

    /// Per-user session generator stream.
    pub fn user(user_id: u32) -> u64 {
        USER_BASE + u64::from(user_id)
    }

    /// Per-party training stream (shuffles and dropout masks).
    pub fn party(party_id: usize) -> u64 {
        PARTY_BASE + party_id as u64
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: u32, hi: u32) -> u32 {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std <= 0.0 {
            return mean;
        }
        Normal::new(mean, std)
            .expect("finite normal parameters")
            .sample(&mut self.inner)
    }

    pub fn poisson(&mut self, mean: f64) -> u32 {
        if mean <= 0.0 {
            return 0;
        }
        let draw: f64 = Poisson::new(mean)
            .expect("positive poisson mean")
            .sample(&mut self.inner);
        draw as u32
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

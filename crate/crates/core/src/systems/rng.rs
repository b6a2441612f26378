//! Counter-based random streams.
//!
//! Every random draw in the library is addressed by a `(seed, stream_id)`
//! pair. A stream is a ChaCha8 keystream keyed by `seed` with the ChaCha
//! stream word set to `stream_id`, so draws for sample `i` never depend on
//! how many draws other samples consumed or on which worker produced them.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Address of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub counter: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, counter: u64) -> Self {
        NoiseKey { seed, counter }
    }

    pub fn stream(self) -> RngStream {
        RngStream::new(self.seed, self.counter)
    }
}

/// Purposes that get disjoint seed domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    BasePoint = 1,
    Input = 2,
    Successor = 3,
    TrialStart = 4,
    TrialStep = 5,
    CheckNoise = 6,
}

/// SplitMix64 finalizer; used to derive per-purpose seeds from the run seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one purpose of a run.
pub fn domain_seed(seed: u64, domain: Domain) -> u64 {
    mix64(seed ^ mix64(domain as u64))
}

pub fn key(seed: u64, domain: Domain, counter: u64) -> NoiseKey {
    NoiseKey::new(domain_seed(seed, domain), counter)
}

/// A replayable stream of uniform and Gaussian draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
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

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal draw by Box–Muller (cosine branch only).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

//! Seeded pseudo-randomness.
//!
//! Every repetition owns one root seed. Each stochastic consumer gets its own
//! ChaCha8 stream, keyed by `splitmix64(root ^ splitmix64(stream_id))`, so
//! adding a consumer never shifts another consumer's draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the consumers inside one run.
pub mod stream {
    pub const CSFQ_DROP: u64 = 1;
    pub const TCP_START_JITTER: u64 = 2;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream for consumer `stream_id`.
    pub fn fork(&self, stream_id: u64) -> SimRng {
        SimRng::new(splitmix64(self.seed ^ splitmix64(stream_id)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform variate in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_distinct() {
        let mut r = SimRng::new(7);
        let a = r.uniform();
        let b = r.uniform();
        assert!((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b));
        assert_ne!(a, b);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SimRng::new(42);
        let mut b = SimRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn mean_of_a_million_draws() {
        let mut r = SimRng::new(2024);
        let n = 1_000_000;
        let mean = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn forks_are_independent_of_each_other() {
        let root = SimRng::new(5);
        let mut a = root.fork(stream::CSFQ_DROP);
        let mut b = root.fork(stream::TCP_START_JITTER);
        let mut a2 = SimRng::new(5).fork(stream::CSFQ_DROP);
        let x = a.uniform();
        assert_ne!(x, b.uniform());
        assert_eq!(x, a2.uniform());
    }
}

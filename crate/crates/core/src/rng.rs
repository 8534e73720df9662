//! Counter-based deterministic random streams.
//!
//! A stream is a ChaCha8 keystream addressed by `(seed, stream id)`. Forking
//! derives a fresh stream id, so draws made for one purpose (drafting round 3,
//! say) never shift the draws another purpose sees.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finaliser, used to derive child stream ids.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `tag`. Does not advance `self`.
    pub fn fork(&self, tag: u64) -> Rng {
        Self::with_stream(self.seed, mix(self.stream ^ mix(tag)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forks_do_not_depend_on_parent_position() {
        let parent = Rng::new(11);
        let mut advanced = parent.clone();
        for _ in 0..17 {
            advanced.uniform();
        }
        let mut x = parent.fork(3);
        let mut y = advanced.fork(3);
        assert_eq!(x.next_u64(), y.next_u64());
    }

    #[test]
    fn sibling_forks_differ() {
        let parent = Rng::new(1);
        let a: Vec<u64> = {
            let mut r = parent.fork(0);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = parent.fork(1);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, b);
        assert!(a.iter().all(|v| !b.contains(v)));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(5);
        let mean = (0..20_000).map(|_| r.uniform()).inspect(|u| assert!((0.0..1.0).contains(u))).sum::<f64>()
            / 20_000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }
}

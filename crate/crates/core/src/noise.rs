//! Counter-based random streams.
//!
//! Every draw is addressed by `(stream seed, path id, step, channel)` and is
//! produced by positioning a ChaCha12 keystream at a fixed offset, so results
//! do not depend on evaluation order and paths can be generated in parallel
//! (or regenerated in isolation) without changing any value.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

const CHANNEL_BITS: u32 = 20;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A keyed source of reproducible uniform/Gaussian draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed }
    }

    /// Derive a stream with a disjoint keyspace; different tags (and chains of
    /// tags) never collide in practice.
    pub fn substream(&self, tag: u64) -> NoiseStream {
        NoiseStream { seed: splitmix64(self.seed ^ splitmix64(tag)) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn words(&self, path: u64, step: u64, channel: u64) -> (u64, u64) {
        debug_assert!(channel < 1 << CHANNEL_BITS);
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        let key = ((step as u128) << CHANNEL_BITS) | channel as u128;
        rng.set_word_pos(key * 4);
        (rng.next_u64(), rng.next_u64())
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&self, path: u64, step: u64, channel: u64) -> f64 {
        let (w, _) = self.words(path, step, channel);
        (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard Gaussian draw (Box–Muller, fixed two-word consumption).
    pub fn gaussian(&self, path: u64, step: u64, channel: u64) -> f64 {
        let (w1, w2) = self.words(path, step, channel);
        // u1 in (0, 1] so the log is finite
        let u1 = ((w1 >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (w2 >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Deterministic partial Fisher–Yates draw of `k` indices out of `n`,
    /// keyed by `round`.
    pub fn sample_indices(&self, round: u64, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let u = self.uniform(round, i as u64, 0);
            let j = i + (u * (n - i) as f64) as usize;
            pool.swap(i, j.min(n - 1));
        }
        pool.truncate(k);
        pool
    }
}

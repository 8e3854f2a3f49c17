//! Deterministic seeded randomness.
//!
//! Every random choice in the crate (low-rank `A` matrices, masks, rotation
//! signs, subsampling, stochastic rounding, data shuffles) is drawn from a
//! [`SeededRng`] derived from a 64-bit seed. The generator is ChaCha8, which
//! is counter-based: a seed fully determines the stream and streams never
//! share state. Client and server regenerate identical streams from the seed
//! that travels on the wire.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a base seed with a salt into a new, well-mixed seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(mix64(seed) ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Seed of the stream for one `(round, client, layer)` tuple.
pub fn stream_seed(seed: u64, round: u32, client: u32, layer: u32) -> u64 {
    let mut s = derive_seed(seed, u64::from(round) | 0x1_0000_0000);
    s = derive_seed(s, u64::from(client) | 0x2_0000_0000);
    derive_seed(s, u64::from(layer) | 0x3_0000_0000)
}

/// Returns the independent stream for `(round, client, layer)` under `seed`.
pub fn rng_stream(seed: u64, round: u32, client: u32, layer: u32) -> SeededRng {
    SeededRng::new(stream_seed(seed, round, client, layer))
}

/// A single-owner random stream that remembers the seed it started from.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this stream was created from; enough to replay it.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f32 {
        if self.inner.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniformly random `count`-subset of `0..n` without replacement,
    /// returned sorted. Uses a partial Fisher-Yates shuffle, so the result
    /// depends only on `(seed, n, count)`.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot sample {count} of {n}");
        if count == n {
            return (0..n).collect();
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool.sort_unstable();
        pool
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Number of retained entries for a keep-fraction over `n` positions:
/// `max(1, round(fraction * n))`, capped at `n`.
pub fn kept_count(fraction: f32, n: usize) -> usize {
    let k = (f64::from(fraction) * n as f64).round() as usize;
    k.clamp(1, n.max(1))
}

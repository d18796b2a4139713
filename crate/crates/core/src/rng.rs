//! The one random stream used for every reproducible draw in the crate.
//!
//! Algorithm (fixed so splits and samples can be reproduced elsewhere):
//! ChaCha8 keyed through `SeedableRng::seed_from_u64(seed)`; bounded integers
//! in `[0, n)` are `(next_u64 * n) >> 64`; unit floats are
//! `(next_u64 >> 11) * 2^-53`; shuffles are Fisher-Yates from the last
//! element down, and `k`-subsets are the first `k` slots of a forward partial
//! Fisher-Yates.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derives an independent stream for `(seed, a, b)`.
    pub fn derived(seed: u64, a: u64, b: u64) -> Self {
        let mixed = splitmix(splitmix(splitmix(seed) ^ a) ^ b);
        StreamRng::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

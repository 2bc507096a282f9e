//! Portable, splittable seeding.
//!
//! An [`Rng`] is a 64-bit key. Substreams are derived by folding tags into
//! the key with the SplitMix64 finaliser, so `(seed, tags)` names a stream
//! independently of how many numbers any other stream consumed. Draws come
//! from ChaCha8 keyed by the SplitMix64 expansion of the stream key, and
//! floats are built from the top 53 bits of each `u64`. Nothing here depends
//! on platform endianness or on `rand` distribution internals.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Purpose tags for substreams.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const STAGE: u64 = 4;
    pub const FIT: u64 = 5;
    pub const DATA: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const TRANSFER: u64 = 8;
    pub const CONTROL: u64 = 9;
    pub const EPOCH_SEARCH: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rng {
    key: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { key: seed }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn substream(&self, tags: &[u64]) -> Rng {
        let key = tags
            .iter()
            .fold(splitmix64(self.key), |acc, &t| splitmix64(acc ^ splitmix64(t)));
        Rng { key }
    }

    pub fn stream(&self) -> Stream {
        let mut seed = [0u8; 32];
        let mut state = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Stream {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }
}

pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`, unbiased by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = {
            let mut s = Rng::new(42).substream(&[purpose::INIT, 3]).stream();
            (0..8).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = Rng::new(42).substream(&[purpose::INIT, 3]).stream();
            (0..8).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn substreams_differ_by_tag_and_order() {
        let r = Rng::new(7);
        let keys = [
            r.substream(&[1, 2]).key(),
            r.substream(&[2, 1]).key(),
            r.substream(&[1]).key(),
            r.substream(&[1, 2, 0]).key(),
            Rng::new(8).substream(&[1, 2]).key(),
        ];
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn uniform_in_range_and_below_bounded() {
        let mut s = Rng::new(1).stream();
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(s.below(7) < 7);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(3).stream().shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}

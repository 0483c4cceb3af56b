//! Seedable random source.
//!
//! Backed by ChaCha8 (`rand_chacha`). The full generator position can be
//! exported as a 56-byte blob, which is what checkpoints store.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Byte length of [`Rng::state_bytes`].
pub const RNG_STATE_LEN: usize = 8 + 32 + 8 + 16;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.random_range(0..n)
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty range");
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Derives an independent generator; advances `self`.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inclusive(0, i);
            items.swap(i, j);
        }
    }

    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RNG_STATE_LEN);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.inner.get_seed());
        out.extend_from_slice(&self.inner.get_stream().to_le_bytes());
        out.extend_from_slice(&self.inner.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != RNG_STATE_LEN {
            return Err(Error::Format(format!(
                "rng state must be {RNG_STATE_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let seed = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let key: [u8; 32] = bytes[8..40].try_into().unwrap();
        let stream = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[48..64].try_into().unwrap());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream);
        inner.set_word_pos(word_pos);
        Ok(Rng { seed, inner })
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
    fn samples_in_range() {
        let mut r = Rng::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(5) < 5);
            let k = r.inclusive(3, 4);
            assert!(k == 3 || k == 4);
        }
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let mut a = Rng::new(99);
        for _ in 0..13 {
            a.normal();
        }
        let mut b = Rng::from_state_bytes(&a.state_bytes()).unwrap();
        assert_eq!(b.seed(), 99);
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn truncated_state_rejected() {
        assert!(Rng::from_state_bytes(&[0u8; 10]).is_err());
    }
}

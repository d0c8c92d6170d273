//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream whose 256-bit key is the four
//! little-endian words `(seed, purpose, replication, prompt)` and whose
//! stream id and counter start at zero. Uniform doubles take the top 53 bits
//! of one `next_u64` draw. Because a stream is fully determined by its key,
//! work can be split across threads in any order and still reproduce the
//! same draws bit for bit on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;

/// What a stream is used for. The discriminant is the second key word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Prompts = 1,
    Responses = 2,
    Training = 3,
    EnvSynthesis = 4,
    Microbatch = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub replication: u64,
    pub prompt: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, replication: u64) -> Self {
        Self {
            seed,
            purpose,
            replication,
            prompt: 0,
        }
    }

    pub fn with_prompt(self, prompt: u64) -> Self {
        Self { prompt, ..self }
    }

    pub fn with_replication(self, replication: u64) -> Self {
        Self {
            replication,
            ..self
        }
    }

    pub fn stream(self) -> Stream {
        Stream::new(self)
    }

    fn key_bytes(self) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        let words = [
            self.seed,
            self.purpose as u64,
            self.replication,
            self.prompt,
        ];
        for (chunk, word) in bytes.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        bytes
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(key.key_bytes()),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF draw from a categorical law. Zero-probability entries are never returned.
    pub fn categorical<T: Scalar>(&mut self, probs: &[T]) -> usize {
        debug_assert!(!probs.is_empty());
        let u = self.next_f64();
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (k, p) in probs.iter().enumerate() {
            let p = p.as_f64();
            if p > 0.0 {
                last_positive = k;
                cumulative += p;
                if u < cumulative {
                    return k;
                }
            }
        }
        // u landed in the rounding gap between the cumulative sum and 1
        last_positive
    }

    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_f64() * bound as f64) as usize % bound
    }
}

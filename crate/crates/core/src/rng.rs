//! Seeded random streams. Every stochastic operation takes a caller-owned
//! generator; these helpers derive independent, reproducible ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub type DiffRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DiffRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`; streams never overlap.
pub fn derived(seed: u64, stream: u64) -> DiffRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw an index from an unnormalized non-negative weight vector.
pub fn sample_categorical<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> usize {
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        let w = w.as_f64();
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Exact position of a ChaCha stream, enough to resume it bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &DiffRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> DiffRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restore_continues_the_same_stream() {
        let mut a = derived(9, 3);
        for _ in 0..17 {
            a.random::<u64>();
        }
        let mut b = RngState::capture(&a).restore();
        for _ in 0..50 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = seeded(1);
        for _ in 0..1000 {
            let i = sample_categorical(&[0.0f64, 2.0, 0.0, 1.0], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}

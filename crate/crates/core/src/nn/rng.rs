//! Seeded, counter-addressable random streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NnError;

/// A ChaCha8 keystream addressed by `(seed, stream, counter)`.
///
/// Two streams built from the same seed and stream id yield the same draws;
/// the counter can be saved and restored to resume a sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_counter(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Raw 32-bit draw, for bulk masks.
    pub fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool, NnError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(NnError::BadProbability(p));
        }
        // `uniform` is in [0, 1): p = 0 never fires, p = 1 always does.
        Ok(self.uniform() < p)
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        z * std
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle(&mut self, items: &mut [usize]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed (expanded to a
//! 256-bit key with the PCG32 expansion of `SeedableRng::seed_from_u64`) and
//! a 64-bit ChaCha stream id. ChaCha is a counter-based generator with fixed
//! constants, so a `(seed, stream, word position)` triple reproduces the same
//! words on every platform. Gaussian variates use the ziggurat sampler of
//! `rand_distr::StandardNormal`.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Named purposes that one user-facing seed fans out into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Init = 1,
    Shuffle = 2,
    Noise = 3,
    Probe = 4,
    Eval = 5,
    Synth = 6,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// Serializable position of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    /// The stream for `kind`, sub-indexed by `index` (image id, patch id...).
    pub fn named(seed: u64, kind: StreamKind, index: u32) -> Self {
        Self::new(seed, ((kind as u64) << 32) | index as u64)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut s = Self::new(state.seed, state.stream);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// ±1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

//! Counter-based RNG streams.
//!
//! Every draw in a trial is addressed by `(seed, trial, node, iteration,
//! purpose)`, so any single draw can be reproduced in isolation and the
//! outcome never depends on the order nodes or trials are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Network = 1,
    InitialState = 2,
    Drift = 3,
    Measurement = 4,
}

/// Address of one RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub node: u64,
    pub iteration: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(seed: u64, trial: u64, node: u64, iteration: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            trial,
            node,
            iteration,
            purpose,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut bytes = [0u8; 32];
        let words = [self.trial, self.node, self.iteration, self.purpose as u64];
        for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
            state = splitmix64(state ^ splitmix64(w));
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Derives the per-trial seed from the run's base seed.
pub fn trial_seed(base_seed: u64, trial: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(trial.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

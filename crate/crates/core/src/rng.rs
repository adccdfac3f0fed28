//! Counter-based random streams.
//!
//! One master seed addresses an independent ChaCha stream per
//! (step, lane, slot) triple. Each particle slot owns its stream, so the
//! result of a step never depends on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose of a stream within one sampler step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Lane {
    Init = 0,
    Resample = 1,
    Mutate = 2,
    NormalizingConstant = 3,
    Pilot = 4,
    User = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamFactory {
    seed: u64,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `slot` of `lane` at sampler step `step`.
    ///
    /// Steps are limited to 2^24 and slots to 2^32.
    pub fn stream(&self, step: usize, lane: Lane, slot: usize) -> StreamRng {
        debug_assert!(step < 1 << 24 && (slot as u64) < 1 << 32);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((step as u64) << 40) | ((lane as u64) << 32) | slot as u64);
        rng
    }
}

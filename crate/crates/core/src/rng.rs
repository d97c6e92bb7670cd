//! Counter-based random substreams.
//!
//! One master seed; each path id selects a ChaCha stream and each time step a
//! fixed block of the keystream, so draws never depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keystream words reserved per time step.
const STEP_WORDS_LOG2: u32 = 16;

#[derive(Debug, Clone)]
pub struct Substreams {
    base: ChaCha8Rng,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator positioned at the start of stream `id`.
    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(id);
        rng.set_word_pos(0);
        rng
    }

    /// Generator positioned at block `step` of stream `id`.
    pub fn at(&self, id: u64, step: u64) -> ChaCha8Rng {
        let mut rng = self.stream(id);
        seek(&mut rng, step);
        rng
    }
}

/// Moves a stream generator to the block reserved for `step`.
pub fn seek(rng: &mut ChaCha8Rng, step: u64) {
    rng.set_word_pos((step as u128) << STEP_WORDS_LOG2);
}

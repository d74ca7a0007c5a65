//! Seeded, splittable randomness.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! user seed, with the stream id selecting the stage and the index within the
//! stage. Each stage can therefore be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stage {
    SynthDictionary = 1,
    SynthShift = 2,
    SynthSource = 3,
    SynthTarget = 4,
    DictionaryInit = 5,
    AtomReplacement = 6,
    Protocol = 7,
    Svm = 8,
    Kmeans = 9,
    AdaptRepair = 10,
    Trial = 11,
    Subsample = 12,
}

pub fn stage_rng(seed: u64, stage: Stage, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage as u64) << 40) ^ (index & ((1 << 40) - 1)));
    rng
}

/// Independent 64-bit seed for the `index`-th repetition (e.g. a protocol trial).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::Rng;
    stage_rng(seed, Stage::Trial, index).random()
}

//! Per-episode random streams.
//!
//! Every episode draws its process, sensor and initial-state noise from a
//! ChaCha stream selected by `(master_seed, episode_index)`, so episodes can
//! run in any order or in parallel and two policies evaluated with the same
//! seed see identical noise. Policy-internal randomness (the Bernoulli
//! trigger) uses a separate stream so it never shifts the noise sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EpisodeRng = ChaCha8Rng;

const POLICY_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Noise stream for one episode.
pub fn episode_rng(master_seed: u64, episode: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(episode);
    rng
}

/// Stream for randomized policies in one episode.
pub fn policy_rng(master_seed: u64, episode: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ POLICY_STREAM_SALT);
    rng.set_stream(episode);
    rng
}

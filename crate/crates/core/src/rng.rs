//! Seed derivation.
//!
//! Every simulation owns a seed derived from the master seed and its index,
//! and every simulation splits that seed into independent ChaCha streams so
//! that, for instance, the subject's behaviour never shifts the reward noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams inside one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Task parameters and dataset/episode draws.
    Tasks = 1,
    /// Observation noise and bandit rewards seen by the subject.
    Environment = 2,
    /// Question letter order and fallback arms for unparsable choices.
    Presentation = 3,
    /// Reference learners (their own reward noise, forest bootstraps).
    Baselines = 4,
    /// Seed handed to scripted agents.
    Agent = 5,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of simulation `index` under `master`.
pub fn simulation_seed(master: u64, index: usize) -> u64 {
    mix64(master ^ mix64(index as u64 ^ 0xA5A5_A5A5_0000_0000))
}

/// A generator for one stream of one simulation.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for a stream, used where a plain `u64` is needed (e.g. agents).
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    mix64(seed ^ mix64(stream as u64))
}

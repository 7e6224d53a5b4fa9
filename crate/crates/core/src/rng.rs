//! Seed derivation and deterministic sampling streams.
//!
//! One root seed fans out to independent streams via splitmix64 over a
//! purpose tag and an index. Streams are ChaCha8 generators, so every
//! consumer (init, shuffle, synthesis, dropout) draws from its own
//! reproducible sequence and reseeding one purpose never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step, standard SplittableRandom constants.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stream purposes, hashed into the derivation so streams never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Parameter initialization.
    Init,
    /// Per-epoch shuffle of the training set; index = epoch.
    Shuffle,
    /// Synthetic dataset generation; index = record index.
    Synth,
    /// Dropout masks; index = global step.
    Dropout,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 0x494e4954,    // "INIT"
            StreamKind::Shuffle => 0x53485546, // "SHUF"
            StreamKind::Synth => 0x53594e54,   // "SYNT"
            StreamKind::Dropout => 0x44524f50, // "DROP"
        }
    }
}

/// Derive the seed for a (purpose, index) stream from the root seed.
pub fn stream_seed(root: u64, kind: StreamKind, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ kind.tag()).wrapping_add(index))
}

/// ChaCha8 generator for a derived stream.
pub fn stream_rng(root: u64, kind: StreamKind, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, kind, index))
}

/// Fisher-Yates shuffle driven by an explicit generator.
pub fn shuffle_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

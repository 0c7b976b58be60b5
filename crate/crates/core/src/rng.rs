//! Seed derivation.
//!
//! An experiment has a single root seed. Each consumer of randomness gets its
//! own ChaCha stream whose seed is a SplitMix64 hash of `(root, purpose, a, b)`.
//! Streams never depend on how many values another stream consumed, so the
//! order in which agents train cannot perturb anything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The purpose a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Shard assignment.
    Partition,
    /// Global model initialisation.
    Init,
    /// Agent sampling at a given round (1-based).
    Sampling { round: u64 },
    /// Mini-batch shuffling of one agent within one round.
    Shuffle { agent: u64, round: u64 },
    /// Synthetic dataset generation; `index` separates train from test.
    Data { index: u64 },
    /// Centralised pretraining shuffles.
    Pretrain { epoch: u64 },
}

impl Stream {
    fn words(self) -> (u64, u64, u64) {
        match self {
            Stream::Partition => (1, 0, 0),
            Stream::Init => (2, 0, 0),
            Stream::Sampling { round } => (3, round, 0),
            Stream::Shuffle { agent, round } => (4, agent, round),
            Stream::Data { index } => (5, index, 0),
            Stream::Pretrain { epoch } => (6, epoch, 0),
        }
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `stream` under `root`.
pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    let (tag, a, b) = stream.words();
    let mut h = splitmix64(root);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// A ready-to-use generator for `stream` under `root`.
pub fn stream_rng(root: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

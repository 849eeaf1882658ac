//! Named random sub-streams derived from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Sweeps,
    GroundTruth,
    Generate,
    /// One stream per query, keyed by its position in the batch.
    FoldIn(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Sweeps => 2,
            Stream::GroundTruth => 3,
            Stream::Generate => 4,
            Stream::FoldIn(i) => (1 << 32) | u64::from(i),
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

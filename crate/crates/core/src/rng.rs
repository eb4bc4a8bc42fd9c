//! Named random substreams derived from a single run seed.
//!
//! Every consumer of randomness (initialization, batching, dropout, data
//! generation, ...) draws from its own ChaCha stream so that perturbing one
//! component never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Batching,
    Dropout,
    Dgp,
    Split,
    Unlabeled,
    Search,
    Discriminator,
    Folds,
    /// Initialization stream for outcome head `(t, r)`.
    Head(usize, usize),
    /// Free-form substream, e.g. one per search draw.
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Batching => 2,
            Stream::Dropout => 3,
            Stream::Dgp => 4,
            Stream::Split => 5,
            Stream::Unlabeled => 6,
            Stream::Search => 7,
            Stream::Discriminator => 8,
            Stream::Folds => 9,
            Stream::Head(t, r) => 100 + 2 * t as u64 + r as u64,
            Stream::Custom(k) => 1 << 32 | k,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

//! Deterministic, splittable random streams.
//!
//! A [`RngHandle`] names a stream by `(seed, stream)`. Materializing the same
//! handle twice yields generators that produce identical sequences, so every
//! stochastic routine in the crate is reproducible from its handle alone.
//! Child handles are derived by hashing, which lets parallel work (one model,
//! one replication, one draw batch) own a private stream regardless of the
//! order in which workers finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type used everywhere in the crate.
pub type SbRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        RngHandle { seed, stream }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> SbRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Handle for the `index`-th child stream. Children of distinct parents
    /// or distinct indices are distinct with overwhelming probability.
    pub fn child(&self, index: u64) -> RngHandle {
        let mixed = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        RngHandle {
            seed: self.seed,
            stream: mixed,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

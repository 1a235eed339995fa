//! Counter-based random streams.
//!
//! Every replica of every experiment owns an [`RngStream`] identified by a
//! `(seed, stream)` pair. The pair maps to a ChaCha8 generator with the
//! stream id selecting one of its 2^64 independent streams, so results do not
//! depend on the order in which replicas are scheduled.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child stream keyed by `tag`; distinct tags give unrelated streams.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5bd1_e995))),
            stream: splitmix64(tag ^ 0x9e37_79b9_7f4a_7c15),
        }
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform direction source for simple random walk steps: each 64-bit draw
/// yields 32 two-bit directions.
pub(crate) struct DirectionBits {
    buf: u64,
    left: u32,
}

impl DirectionBits {
    pub(crate) fn new() -> Self {
        DirectionBits { buf: 0, left: 0 }
    }

    #[inline]
    pub(crate) fn next<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.left == 0 {
            self.buf = rng.next_u64();
            self.left = 32;
        }
        let d = (self.buf & 3) as usize;
        self.buf >>= 2;
        self.left -= 1;
        d
    }
}

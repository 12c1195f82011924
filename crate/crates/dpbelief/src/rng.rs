//! Counter-based random substreams.
//!
//! Every random draw in a run comes from a ChaCha8 generator whose seed is a
//! hash of the master seed and a coordinate tuple (purpose, replication,
//! agent, round, state, time). Two runs with the same master seed therefore
//! see identical numbers no matter how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Keeps e.g. data generation and noise injection
/// independent even when the other coordinates coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Noise = 2,
    Arrivals = 3,
    Split = 4,
    Calibration = 5,
    Perturbation = 6,
    Divergence = 7,
    Permutation = 8,
    Misc = 9,
}

/// Coordinates of one substream. Unused coordinates stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamKey {
    pub agent: u64,
    pub round: u64,
    pub state: u64,
    pub time: u64,
}

impl StreamKey {
    pub fn agent(agent: usize) -> Self {
        StreamKey { agent: agent as u64, ..Default::default() }
    }

    pub fn with_round(mut self, round: usize) -> Self {
        self.round = round as u64;
        self
    }

    pub fn with_state(mut self, state: usize) -> Self {
        self.state = state as u64;
        self
    }

    pub fn with_time(mut self, time: usize) -> Self {
        self.time = time as u64;
        self
    }
}

/// Source of reproducible substreams for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
    replication: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master, replication: 0 }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn replication_id(&self) -> u64 {
        self.replication
    }

    /// The streams of replication `r`. Replication ids are absolute, not
    /// relative to the current one.
    pub fn replication(&self, r: usize) -> Self {
        Streams { master: self.master, replication: r as u64 }
    }

    /// 64-bit seed for the given coordinates.
    pub fn seed(&self, purpose: Purpose, key: StreamKey) -> u64 {
        let mut h = splitmix64(self.master);
        for word in [
            purpose as u64,
            self.replication,
            key.agent,
            key.round,
            key.state,
            key.time,
        ] {
            h = splitmix64(h ^ word.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        }
        h
    }

    pub fn rng(&self, purpose: Purpose, key: StreamKey) -> ChaCha8Rng {
        let seed = self.seed(purpose, key);
        let mut bytes = [0u8; 32];
        let mut h = seed;
        for chunk in bytes.chunks_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

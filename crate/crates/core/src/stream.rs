//! Keyed random streams.
//!
//! A stream is identified by `(master seed, purpose, process, round, client)`. Two
//! callers with different keys never share state, which keeps concurrent execution
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Partition = 2,
    InitWeights = 3,
    SampleAlpha = 4,
    SampleBeta = 5,
    DeltaBall = 6,
    ClientSelect = 7,
    LocalTrain = 8,
    FedPopL = 9,
    FedPopG = 10,
    Finetune = 11,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master: u64,
    pub purpose: Purpose,
    pub process: u64,
    pub round: u64,
    pub client: u64,
}

impl StreamKey {
    pub fn new(master: u64, purpose: Purpose) -> Self {
        StreamKey {
            master,
            purpose,
            process: 0,
            round: 0,
            client: 0,
        }
    }

    pub fn process(mut self, process: usize) -> Self {
        self.process = process as u64;
        self
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = round as u64;
        self
    }

    pub fn client(mut self, client: usize) -> Self {
        self.client = client as u64;
        self
    }

    pub fn rng(&self) -> Rng {
        let mut state = splitmix64(self.master ^ 0x6a09_e667_f3bc_c908);
        for word in [self.purpose as u64, self.process, self.round, self.client] {
            state = splitmix64(state ^ word.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Shorthand for `StreamKey::new(master, purpose).rng()`.
pub fn stream(master: u64, purpose: Purpose) -> Rng {
    StreamKey::new(master, purpose).rng()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{stream_rng, RngSnapshot, StreamId};

/// Cycling batch sampler: iterates a shuffled permutation and reshuffles
/// when exhausted. Batch delivery order is a pure function of the seed.
pub struct BatchSampler {
    order: Vec<u32>,
    cursor: usize,
    rng: ChaCha8Rng,
}

/// Serializable position of a sampler, for checkpoint resume.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SamplerSnapshot {
    pub order: Vec<u32>,
    pub cursor: u64,
    pub rng: RngSnapshot,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64, stream: StreamId) -> Self {
        let mut rng = stream_rng(seed, stream);
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, cursor: 0, rng }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Next `k` indices, wrapping with a reshuffle at each epoch boundary.
    pub fn next_indices(&mut self, k: usize) -> Vec<usize> {
        assert!(!self.order.is_empty(), "sampler over an empty set");
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor] as usize);
            self.cursor += 1;
        }
        out
    }

    pub fn snapshot(&self) -> SamplerSnapshot {
        SamplerSnapshot {
            order: self.order.clone(),
            cursor: self.cursor as u64,
            rng: RngSnapshot::capture(&self.rng),
        }
    }

    pub fn restore(snap: &SamplerSnapshot) -> Self {
        BatchSampler {
            order: snap.order.clone(),
            cursor: snap.cursor as usize,
            rng: snap.rng.restore(),
        }
    }
}

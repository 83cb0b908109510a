use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fixed stream ids carved out of one master seed. Each consumer of
/// randomness owns a stream, so adding a draw in one place never shifts the
/// sequence seen by another.
#[derive(Debug, Clone, Copy)]
pub enum StreamId {
    PhantomGen = 1,
    SplitShuffle = 2,
    GeneratorInit = 3,
    DiscriminatorInit = 4,
    LabeledSampler = 5,
    UnlabeledSampler = 6,
    Dropout = 7,
    PoolShuffle = 8,
}

/// A ChaCha stream for `(seed, stream)`; deterministic and snapshotable.
pub fn stream_rng(seed: u64, stream: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Exact position of a ChaCha stream, sufficient to resume the sequence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 split into (hi, lo) because JSON integers cap at 64 bits.
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        rng
    }
}

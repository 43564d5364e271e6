use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ALGORITHM: &str = "chacha8";

/// Seeded random stream whose exact position can be saved and restored.
#[derive(Debug, Clone)]
pub struct RandomState {
    seed: u64,
    rng: ChaCha8Rng,
}

/// Serialized form of a [`RandomState`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSnapshot {
    pub seed: u64,
    pub algorithm: String,
    pub stream: u64,
    /// Word position as a decimal string (u128 does not survive JSON round trips).
    pub word_pos: String,
}

impl RandomState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    pub fn snapshot(&self) -> RandomSnapshot {
        RandomSnapshot {
            seed: self.seed,
            algorithm: ALGORITHM.to_string(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(snap: &RandomSnapshot) -> crate::Result<Self> {
        if snap.algorithm != ALGORITHM {
            return Err(crate::Error::Checkpoint(format!(
                "unsupported rng algorithm '{}'",
                snap.algorithm
            )));
        }
        let pos: u128 = snap
            .word_pos
            .parse()
            .map_err(|_| crate::Error::Checkpoint(format!("bad rng position '{}'", snap.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(snap.seed);
        rng.set_stream(snap.stream);
        rng.set_word_pos(pos);
        Ok(Self {
            seed: snap.seed,
            rng,
        })
    }
}

impl RngCore for RandomState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

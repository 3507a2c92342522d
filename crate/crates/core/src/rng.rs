//! Reproducible random streams.
//!
//! A run has one master seed. Pipelines derive their own stream by hashing a
//! label into the seed, and parallel work items (replicas, particles) derive
//! a child stream from their integer coordinates. A work item's draws depend
//! only on its key, never on which worker runs it or in which order.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use sha2::{Digest, Sha256};

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        Self(master)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Child seed for a named pipeline.
    pub fn label(self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Self(u64::from_le_bytes(bytes))
    }

    /// Child seed for an integer coordinate (generation, particle, replica).
    #[inline]
    pub fn index(self, i: u64) -> Self {
        let mut sm = SplitMix64::seed_from_u64(self.0 ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let a = sm.next_u64();
        Self(a ^ i.rotate_left(29))
    }

    #[inline]
    pub fn rng(self) -> StreamRng {
        StreamRng::seed_from_u64(self.0)
    }
}

//! Seeded random streams.
//!
//! Every stochastic routine takes a [`SimRng`] (ChaCha8). Independent streams
//! are obtained from a [`RngState`] by deriving child states from string
//! labels, so a sweep cell's randomness depends only on the master seed and
//! the cell's identifier, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The repo-wide generator.
pub type SimRng = ChaCha8Rng;

/// A seed together with the means to derive labelled child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator positioned at the start of this state's stream.
    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(self.seed)
    }

    /// Child state for `label`. Stable across platforms and releases.
    pub fn derive(&self, label: &str) -> RngState {
        RngState {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(label.as_bytes()))),
        }
    }

    /// Child state for an integer index, e.g. a shard or replicate number.
    pub fn derive_index(&self, index: u64) -> RngState {
        RngState {
            seed: splitmix64(
                self.seed
                    .wrapping_add(splitmix64(index ^ 0xA076_1D64_78BD_642F)),
            ),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngState::new(42).rng();
        let mut b = RngState::new(42).rng();
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let root = RngState::new(7);
        let a = root.derive("world");
        let b = root.derive("pairs");
        assert_ne!(a, b);
        assert_eq!(a, RngState::new(7).derive("world"));
        assert_ne!(root.derive_index(0), root.derive_index(1));
        // Frozen so that a change of the derivation scheme is noticed.
        assert_eq!(RngState::new(0).derive("x").seed(), 6597702949558766396);
        assert_ne!(
            RngState::new(0).derive("x").seed(),
            RngState::new(1).derive("x").seed()
        );
    }
}

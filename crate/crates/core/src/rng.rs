//! Seed derivation and normal variates.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded from a
//! [`SeedStream`] key. Keys are derived hierarchically (master seed, cell,
//! replication, imputation) with SplitMix64 finalization, so any leaf can be
//! reproduced without replaying its siblings. Normal variates are produced
//! by inverting `Φ` on a 53-bit open-interval uniform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::normal_quantile;

/// Node in the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(splitmix64(seed ^ 0x6A09_E667_F3BC_C908))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    /// Child stream by integer index.
    pub fn child(self, index: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    /// Child stream by label (FNV-1a of the bytes).
    pub fn child_label(self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        SeedStream(splitmix64(self.0 ^ h.rotate_left(17)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on the open interval (0, 1) with 53-bit resolution.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    normal_quantile(open_unit(rng))
}

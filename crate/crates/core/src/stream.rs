//! Deterministic per-task random streams.
//!
//! Every random quantity in a simulation is drawn from its own ChaCha8
//! stream whose seed is a hash of (master seed, trial, block, purpose), so
//! results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Codebook = 1,
    Noise = 2,
    Placement = 3,
    Velocity = 4,
    ZoomCodebook = 5,
    ZoomNoise = 6,
    Validation = 7,
}

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, trial: u64, block: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ trial);
    h = splitmix64(h ^ block.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(h ^ purpose as u64)
}

pub fn stream(master: u64, trial: u64, block: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, trial, block, purpose))
}

//! Seeded random streams.
//!
//! Every unit of simulation work (a subject within a replicate, a fold, a
//! chain) draws from its own stream derived from the master seed and a path of
//! integer tags. Results therefore do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream for `seed` and the tag path.
pub fn stream_rng(seed: u64, path: &[u64]) -> SimRng {
    let mut h = splitmix64(seed);
    for &tag in path {
        h = splitmix64(h ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    SimRng::seed_from_u64(h)
}

/// Derives a child seed (as opposed to a stream) for handing to another API.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for &tag in path {
        h = splitmix64(h ^ splitmix64(tag));
    }
    h
}

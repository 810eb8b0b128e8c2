//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of the master seed and a path of integer tags (stage, replicate, ...).
//! Work items therefore never share generator state, and results do not
//! depend on how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags used as the first element of a stream path.
pub mod tag {
    pub const FOLDS: u64 = 0x01;
    pub const BOOTSTRAP: u64 = 0x02;
    pub const PERMUTATION: u64 = 0x03;
    pub const DATASET: u64 = 0x04;
    pub const CALIBRATION: u64 = 0x05;
    pub const TRUTH: u64 = 0x06;
    pub const BOOTSTRAP_SE: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &t| {
        splitmix64(acc ^ splitmix64(t))
    })
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

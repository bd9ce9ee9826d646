//! Deterministic seed derivation for independent random streams.
//!
//! Every random process in a run draws from its own ChaCha stream keyed by
//! `(master_seed, sample_id, stream_id)`, so results do not depend on the
//! order in which parallel workers finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids of the independent processes inside one filter run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Swap = 1,
    Dissemination = 2,
    Noise = 3,
    Init = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, sample_id: u64, stream_id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ sample_id) ^ stream_id.rotate_left(32))
}

pub fn stream_rng(master: u64, sample_id: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, sample_id, stream as u64))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

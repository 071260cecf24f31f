//! Portable random streams.
//!
//! All sampling goes through ChaCha20 (a counter-based generator) keyed by
//! `seed_from_u64(seed)`. Independent substreams are selected with
//! `set_stream`: stream 0 draws the RBF centres, stream `1 + i` drives
//! training trajectory `i`. Output is identical on every platform and does
//! not depend on how trajectories are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const CENTER_STREAM: u64 = 0;

pub fn trajectory_stream(index: usize) -> u64 {
    1 + index as u64
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

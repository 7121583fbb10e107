//! Counter-based per-path random streams.
//!
//! Every path owns a dedicated ChaCha8 stream keyed by `(master seed, path
//! index)`. Streams are independent of scheduling, so an ensemble generated
//! with any number of worker threads is bit-identical to the serial one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 step; whitens counters into well-spread 64-bit words.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a tag (path or job index).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// The random stream for one path of one ensemble.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = derive_seed(seed, path_index);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

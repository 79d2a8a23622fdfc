//! Seeded random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(master seed, purpose tag, index)`. Streams are independent ChaCha8
//! instances, so adding a new consumer never shifts the numbers seen by an
//! existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut state = seed ^ fnv1a(tag).rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, for handing a sub-experiment its own master seed.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut state = seed ^ fnv1a(tag) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93);
    splitmix64(&mut state)
}

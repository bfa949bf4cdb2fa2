//! Counter-based random substreams.
//!
//! Every replicate draws from its own ChaCha8 stream: the key is expanded from
//! the master seed and the 64-bit stream number is the replicate id. A
//! replicate's mask therefore depends only on `(seed, replicate id)`, never on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(stream);
    rng
}

/// Replicate id for replicate `index` of Monte Carlo unit `unit` in
/// experiment `tag`: 8 bits of tag, 36 bits of unit, 20 bits of index.
pub fn replicate_id(tag: u8, unit: u64, index: u64) -> u64 {
    debug_assert!(unit < 1 << 36 && index < 1 << 20);
    (u64::from(tag) << 56) | (unit << 20) | index
}

//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream seeded by [`derive_seed`]`(master_seed, replicate, stream_tag)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix(splitmix(splitmix(master) ^ stream_tag) ^ replicate)`.
pub fn derive_seed(master_seed: u64, replicate: u64, stream_tag: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ stream_tag) ^ replicate)
}

/// Packs up to eight ASCII bytes into a stream tag.
pub const fn tag(name: &[u8]) -> u64 {
    let mut out = 0u64;
    let mut i = 0;
    while i < name.len() && i < 8 {
        out = (out << 8) | name[i] as u64;
        i += 1;
    }
    out
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

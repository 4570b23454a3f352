//! Seed fan-out: one 64-bit run seed deterministically derives an
//! independent generator for every initializer and sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the named stream of `seed`.
pub fn stream(seed: u64, tag: &str) -> Rng {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    Rng::seed_from_u64(splitmix(seed ^ splitmix(h)))
}

/// Generator for the `index`-th member of a family of named streams.
pub fn indexed_stream(seed: u64, tag: &str, index: u64) -> Rng {
    stream(splitmix(seed.wrapping_add(splitmix(index))), tag)
}

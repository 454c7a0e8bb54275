//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every stochastic operation receives an explicit seed. Sub-streams are
//! derived by hashing `(seed, tag)` through SplitMix64, so work split across
//! threads draws exactly the same numbers as a serial run.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the sub-stream `tag` of `seed`.
#[inline]
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn derive2(seed: u64, a: u64, b: u64) -> u64 {
    derive(derive(seed, a), b)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    rng(derive(seed, tag))
}

/// Standard normal draw.
pub fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Stable 64-bit FNV-1a hash, used to key streams by string identifiers.
pub fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform value in `[0, 1)` from a counter, without a stateful generator.
#[inline]
pub fn unit_from_counter(seed: u64, counter: u64) -> f64 {
    (splitmix64(seed ^ splitmix64(counter)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

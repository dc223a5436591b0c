//! Derived random streams.
//!
//! A run has one user-facing seed. Every consumer of randomness (data
//! generation, train/test shuffling, partitioning, weight init, per-client
//! minibatch order, per-client noise) gets its own ChaCha8 stream keyed by
//! `(seed, purpose, a, b)`. The key is folded through the SplitMix64
//! finalizer:
//!
//! ```text
//! h0 = mix(seed ^ mix(purpose))
//! h1 = mix(h0 ^ mix(a + 1))
//! h2 = mix(h1 ^ mix(b + 1))
//! ```
//!
//! and `h2` seeds the stream. For client work `a` is the round and `b` the
//! client id, so a client's stream does not depend on which thread runs it or
//! in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Generate = 1,
    Split = 2,
    Partition = 3,
    Init = 4,
    Train = 5,
    Noise = 6,
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let h = mix64(seed ^ mix64(purpose as u64));
    let h = mix64(h ^ mix64(a.wrapping_add(1)));
    mix64(h ^ mix64(b.wrapping_add(1)))
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, purpose, a, b))
}

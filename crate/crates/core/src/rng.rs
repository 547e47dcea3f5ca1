//! Portable random streams.
//!
//! Every draw is built from raw ChaCha20 keystream words with explicit
//! bit manipulation, so a given seed produces the same values on every
//! platform and in any language that implements ChaCha20.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::stats::quantile_unchecked;

/// Single-owner random stream used for sampling and channel noise.
pub type RandomStream = ChaCha20Rng;

/// Stream seeded from a 32-byte seed.
pub fn stream_from_seed(seed: [u8; 32]) -> RandomStream {
    ChaCha20Rng::from_seed(seed)
}

/// Stream seeded from a 64-bit experiment seed.
pub fn stream_from_u64(seed: u64) -> RandomStream {
    stream_from_seed(derive_seed(seed, &[]))
}

/// Per-task seed derived from a master seed and a path of indices,
/// e.g. `(condition, trial)`. Independent of evaluation order.
pub fn derive_seed(master: u64, path: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"t2smark/task-seed/v1");
    h.update(master.to_le_bytes());
    h.update((path.len() as u64).to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

/// Stream for task `path` under `master`.
pub fn task_stream(master: u64, path: &[u64]) -> RandomStream {
    stream_from_seed(derive_seed(master, path))
}

const TWO_POW_NEG_52: f64 = 1.0 / (1u64 << 52) as f64;

/// Maps a 64-bit word to a uniform in the open interval (0, 1) using its
/// top 52 bits: `(⌊w / 2¹²⌋ + ½) / 2⁵²`.
#[inline]
pub fn word_to_open_unit(word: u64) -> f64 {
    ((word >> 12) as f64 + 0.5) * TWO_POW_NEG_52
}

/// Uniform draw in (0, 1).
#[inline]
pub fn unit_open<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    word_to_open_unit(rng.next_u64())
}

/// Standard normal draw by inverse CDF; consumes exactly one 64-bit word.
#[inline]
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    quantile_unchecked(unit_open(rng))
}

/// Unbiased integer in `[0, bound)` by rejection on 32-bit words.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u32) -> u32 {
    assert!(bound > 0, "bound must be positive");
    // Largest multiple of `bound` that fits in 2^32.
    let limit = (1u64 << 32) - (1u64 << 32) % u64::from(bound);
    loop {
        let x = u64::from(rng.next_u32());
        if x < limit {
            return (x % u64::from(bound)) as u32;
        }
    }
}

/// Fresh 64-bit seed drawn from the stream.
pub fn next_seed<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

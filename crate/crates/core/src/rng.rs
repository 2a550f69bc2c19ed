//! Seed derivation and substreams.
//!
//! A master seed keys a ChaCha8 generator; the four random components of an
//! event stream (arrival times, choices, departure times, selections) each use
//! the same key with a distinct ChaCha stream id. Replica seeds are derived
//! from a base seed with SplitMix64 finalization over `(base, label, index)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labels for the independent random components of an event stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    ArrivalTimes = 0x4152_5249_5641_4c53,
    Choices = 0x4348_4f49_4345_5321,
    DepartureTimes = 0x4445_5041_5254_5352,
    Selections = 0x5345_4c45_4354_494f,
}

/// SplitMix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed, a purpose label and an index.
pub fn derive_seed(base: u64, label: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(label)).wrapping_add(index))
}

/// Generator for one labelled component of the stream keyed by `seed`.
pub fn substream(seed: u64, label: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Plain generator for auxiliary draws (initial states, geometric samples).
pub fn aux_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform index in `0..n` by 64x64 -> 128 multiply-shift.
///
/// No rejection step: the bias is at most `n / 2^64`, far below anything a
/// simulation can resolve, and every index costs exactly one `u64`.
#[inline]
pub fn bounded_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

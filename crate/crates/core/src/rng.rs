//! Counter-based random streams for reproducible parallel simulation.
//!
//! Every simulation reads from its own ChaCha8 stream: the key is derived
//! from the master seed, the stream id from `(simulation index, lane)`, and
//! unit `i` consumes the `i`-th 64-bit word. The words a unit sees depend
//! only on `(master, sim, lane, i)`, never on which worker ran the
//! simulation or in what order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Lanes separate independent sub-streams within one simulation (for
/// example one per window in a joint test). Single-window tests use lane 0.
pub const MAX_LANES: u64 = 1 << 16;

#[derive(Clone, Debug)]
pub struct StreamFactory {
    base: ChaCha8Rng,
}

impl StreamFactory {
    pub fn new(master_seed: u64) -> Self {
        StreamFactory {
            base: ChaCha8Rng::seed_from_u64(master_seed),
        }
    }

    /// Generator positioned at word 0 of the `(sim, lane)` stream.
    pub fn stream(&self, sim: u64, lane: u16) -> ChaCha8Rng {
        debug_assert!(sim < u64::MAX / MAX_LANES);
        let mut rng = self.base.clone();
        rng.set_stream(sim * MAX_LANES + lane as u64);
        rng.set_word_pos(0);
        rng
    }
}

/// Maps a uniform 64-bit word onto `0..options` by multiply-shift.
/// Exact for power-of-two `options`; otherwise biased by at most
/// `options / 2^64`.
#[inline]
pub fn pick(word: u64, options: usize) -> usize {
    ((word as u128 * options as u128) >> 64) as usize
}

/// Fills `out[i]` with the option index of unit `i` for one simulation.
pub fn fill_options(rng: &mut ChaCha8Rng, options: usize, out: &mut [u16]) {
    for slot in out.iter_mut() {
        *slot = pick(rng.next_u64(), options) as u16;
    }
}

/// SplitMix64 finalizer, used to derive child seeds from structured keys.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed from a master seed and an ordered list of key parts.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

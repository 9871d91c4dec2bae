//! Reproducible random streams.
//!
//! All randomness in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64`. Sign flips and label shuffles consume raw
//! `next_u64` words through the helpers below rather than `rand`'s
//! distribution adapters, so a given seed yields the same transformations on
//! every platform. Independent streams (one per simulation replicate) are
//! obtained with [`stream`], which selects a ChaCha stream id.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform integer in `0..n` by rejection on 64-bit words.
pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0);
    let zone = u64::MAX - (u64::MAX % n) - 1;
    loop {
        let v = rng.next_u64();
        if v <= zone {
            return v % n;
        }
    }
}

/// Fisher-Yates shuffle driven by [`below`].
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Writes `out.len()` random signs (+1.0 / -1.0), one bit per sign taken
/// from consecutive 64-bit words, least significant bit first.
pub fn fill_signs(rng: &mut impl RngCore, out: &mut [f64]) {
    for chunk in out.chunks_mut(64) {
        let word = rng.next_u64();
        for (k, s) in chunk.iter_mut().enumerate() {
            *s = if (word >> k) & 1 == 1 { -1.0 } else { 1.0 };
        }
    }
}

//! Seed derivation. Every component seed is `top_level_seed + OFFSET`, and
//! per-phase or per-iteration streams are mixed from that with [`mix`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: u64 = 0;
pub const MODEL_INIT: u64 = 1;
pub const STREAM: u64 = 2;
pub const BUDGET: u64 = 3;
pub const LOCAL_ENV: u64 = 4;
pub const POLICY: u64 = 5;
pub const BATCHES: u64 = 6;
pub const EXEMPLARS: u64 = 7;
pub const SELECTION: u64 = 8;

/// SplitMix64 finalizer over `a` and `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn component(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

/// Rng for `component(seed, offset)` mixed with the given path (phase, iteration, ...).
pub fn rng(seed: u64, offset: u64, path: &[u64]) -> ChaCha8Rng {
    let s = path
        .iter()
        .fold(component(seed, offset), |acc, &p| mix(acc, p));
    ChaCha8Rng::seed_from_u64(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn paths_separate_streams() {
        let a: u64 = rng(1, BATCHES, &[0]).random();
        let b: u64 = rng(1, BATCHES, &[1]).random();
        let c: u64 = rng(1, BATCHES, &[0]).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}

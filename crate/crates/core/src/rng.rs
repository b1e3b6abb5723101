//! Seeded randomness.
//!
//! Every random draw in the crate flows through a `ChaCha20Rng` so that runs
//! are reproducible from a single `u64` seed. The float primitives are
//! defined here directly on top of `next_u64` (rather than through a
//! distributions crate) so their exact draw order is part of this crate's
//! contract: a test can re-derive the same noise from the same seed.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub use rand_chacha::ChaCha20Rng as Rng;

/// Fresh generator from a bare seed.
pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent child stream by consuming one draw of `parent`.
pub fn fork(parent: &mut ChaCha20Rng) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(parent.next_u64())
}

/// Uniform on the open interval (0, 1). Consumes exactly one `u64`.
///
/// The top 53 bits are centered into the unit interval, so 0 and 1 are
/// unreachable and the value is always safe under `ln`.
pub fn uniform_open(rng: &mut ChaCha20Rng) -> f64 {
    (((rng.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
}

/// Uniform on `[lo, hi)`.
pub fn uniform_in(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
}

/// Standard normal via the Box-Muller transform. Consumes exactly two
/// `u64` draws; the sine mate of the pair is discarded so consecutive calls
/// stay independent of call grouping.
pub fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard Gumbel draw `-ln(-ln U)`. Consumes exactly one `u64`.
pub fn standard_gumbel(rng: &mut ChaCha20Rng) -> f64 {
    -(-uniform_open(rng).ln()).ln()
}

/// Uniform integer in `[0, bound)` via the widening-multiply trick.
pub fn below(rng: &mut ChaCha20Rng, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

/// A seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(11);
        let mut b = seeded(11);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = seeded(12);
        assert_ne!(seeded(11).next_u64(), c.next_u64());
    }

    #[test]
    fn uniform_open_stays_inside_unit_interval() {
        let mut rng = seeded(3);
        for _ in 0..10_000 {
            let u = uniform_open(&mut rng);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments_are_roughly_standard() {
        let mut rng = seeded(5);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn normal_consumes_two_words() {
        let mut a = seeded(9);
        let mut b = seeded(9);
        let _ = standard_normal(&mut a);
        b.next_u64();
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn gumbel_mean_is_near_euler_gamma() {
        let mut rng = seeded(17);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| standard_gumbel(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5772).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = seeded(23);
        let idx = shuffled_indices(257, &mut rng);
        let mut seen = vec![false; 257];
        for &i in &idx {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_seed_deterministic() {
        let a = shuffled_indices(100, &mut seeded(40));
        let b = shuffled_indices(100, &mut seeded(40));
        assert_eq!(a, b);
    }
}

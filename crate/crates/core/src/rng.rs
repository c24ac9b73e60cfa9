//! Deterministic pseudo-randomness.
//!
//! The generator is xoshiro256** (Blackman & Vigna) with the state seeded by
//! four consecutive outputs of SplitMix64 applied to the user seed. Uniform
//! doubles take the top 53 bits of a 64-bit draw. Any implementation following
//! this recipe reproduces the same streams bit-for-bit on any platform.

use crate::error::{Error, Result};

/// Deterministic stream state. Single-owner: clone to fork, never share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    s: [u64; 4],
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    /// Seed the stream. Equal seeds give equal streams.
    pub fn seeded(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        RngState { s }
    }

    /// Derive an independent substream keyed by `path`. The key values are
    /// absorbed through SplitMix64 so (base, path) pairs map to well-separated
    /// seeds; used to give every (split, class, index) its own stream.
    pub fn substream(base_seed: u64, path: &[u64]) -> Self {
        let mut sm = base_seed;
        let mut acc = splitmix64(&mut sm);
        for &v in path {
            let mut k = acc ^ v.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            acc = splitmix64(&mut k);
        }
        RngState::seeded(acc)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform double in [0, 1), 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Gaussian draw via Box-Muller (two uniforms per pair, cached second).
    pub fn normal(&mut self, mu: f64, sigma: f64) -> f64 {
        // Box-Muller without caching keeps the stream layout trivial:
        // exactly two u64 draws per normal.
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        mu + sigma * r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Bernoulli bit with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> Result<u8> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Param(format!("bernoulli p={p} outside [0,1]")));
        }
        Ok(u8::from(self.uniform() < p))
    }

    /// Random index in [0, n).
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from an independent implementation of the splitmix64+xoshiro256**
    // recipe documented above.
    const SEED7_REF: [u64; 6] = [
        12923355070828475994,
        5142052590334782674,
        15488392906492639638,
        18098058644649177664,
        18278145976438096664,
        16099837482234907721,
    ];
    const SEED0_REF: [u64; 6] = [
        11091344671253066420,
        13793997310169335082,
        1900383378846508768,
        7684712102626143532,
        13521403990117723737,
        18442103541295991498,
    ];

    #[test]
    fn matches_reference_stream() {
        let mut r = RngState::seeded(7);
        for &want in &SEED7_REF {
            assert_eq!(r.next_u64(), want);
        }
        let mut r0 = RngState::seeded(0);
        for &want in &SEED0_REF {
            assert_eq!(r0.next_u64(), want);
        }
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RngState::seeded(7);
        let mut b = RngState::seeded(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge_quickly() {
        let mut a = RngState::seeded(7);
        let mut b = RngState::seeded(8);
        let diverged = (0..10).any(|_| a.next_u64() != b.next_u64());
        assert!(diverged);
    }

    #[test]
    fn seed_zero_is_not_degenerate() {
        let mut r = RngState::seeded(0);
        let draws: Vec<f64> = (0..100).map(|_| r.uniform()).collect();
        let mean = draws.iter().sum::<f64>() / 100.0;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(var > 0.0);
        assert!(draws.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn bernoulli_endpoints() {
        let mut r = RngState::seeded(3);
        for _ in 0..100 {
            assert_eq!(r.bernoulli(0.0).unwrap(), 0);
            assert_eq!(r.bernoulli(1.0).unwrap(), 1);
        }
        assert!(r.bernoulli(1.5).is_err());
        assert!(r.bernoulli(-0.1).is_err());
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let mut r = RngState::seeded(42);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| r.uniform()).sum();
        let mean = sum / n as f64;
        // 3-sigma bound: sigma = 1/sqrt(12 n) ~ 0.00029
        assert!((mean - 0.5).abs() < 0.003, "mean={mean}");
    }

    #[test]
    fn normal_moments() {
        let mut r = RngState::seeded(11);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| r.normal(2.0, 3.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean={mean}");
        assert!((var - 9.0).abs() < 0.2, "var={var}");
    }

    #[test]
    fn substreams_differ_by_path() {
        let mut a = RngState::substream(1, &[0, 0, 0]);
        let mut b = RngState::substream(1, &[0, 0, 1]);
        let mut c = RngState::substream(1, &[0, 1, 0]);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_ne!(xs, ys);
        assert_ne!(xs, zs);
        assert_ne!(ys, zs);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = RngState::seeded(5);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}

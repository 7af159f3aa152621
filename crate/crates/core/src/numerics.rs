//! Special functions and random sampling primitives.
//!
//! `ln_gamma`, `digamma` and `trigamma` share one scheme: shift the argument
//! upward with the functional recurrence until it reaches the asymptotic
//! region, then evaluate the Stirling-type series. All three are implemented
//! here rather than taken from the platform libm so test goldens stay stable.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

use crate::error::{Error, Result};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Arguments at or above this value go straight to the asymptotic series.
const ASYMPTOTIC_MIN: f64 = 15.0;

/// B_{2k} / (2k (2k-1)) for k = 1..8.
const LN_GAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// B_{2k} / (2k) for k = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..7.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} requires a finite x > 0, got {x}")))
    }
}

/// Evaluates an odd power series `sum c_k * t^(2k-1)` style polynomial in `inv_sq`.
#[inline]
fn series(coeffs: &[f64], inv_sq: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * inv_sq + c)
}

/// log Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_positive("ln_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted < ASYMPTOTIC_MIN {
        prod *= shifted;
        shifted += 1.0;
    }
    let inv = 1.0 / shifted;
    let stirling = (shifted - 0.5) * shifted.ln() - shifted
        + HALF_LN_TWO_PI
        + inv * series(&LN_GAMMA_SERIES, inv * inv);
    if prod == 1.0 {
        stirling
    } else {
        stirling - prod.ln()
    }
}

/// ψ(x) = d/dx log Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut shifted = x;
    let mut acc = 0.0;
    while shifted < ASYMPTOTIC_MIN {
        acc -= 1.0 / shifted;
        shifted += 1.0;
    }
    let inv = 1.0 / shifted;
    let inv_sq = inv * inv;
    acc + shifted.ln() - 0.5 * inv - inv_sq * series(&DIGAMMA_SERIES, inv_sq)
}

/// ψ′(x) for x > 0. Positive and strictly decreasing.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut shifted = x;
    let mut acc = 0.0;
    while shifted < ASYMPTOTIC_MIN {
        acc += 1.0 / (shifted * shifted);
        shifted += 1.0;
    }
    let inv = 1.0 / shifted;
    let inv_sq = inv * inv;
    acc + inv + 0.5 * inv_sq + inv * inv_sq * series(&TRIGAMMA_SERIES, inv_sq)
}

/// A seeded, splittable pseudorandom stream.
///
/// Backed by ChaCha8. `split` derives children from the seed alone, so a child
/// is the same no matter how much of the parent has been consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `index`. Distinct indices map to distinct child seeds
    /// (the seed derivation is a bijection of `index` for a fixed parent).
    pub fn split(&self, index: u64) -> RngStream {
        let offset = index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        RngStream::new(splitmix64(self.seed ^ splitmix64(offset)))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// One draw from Gamma(shape, rate) (density ∝ x^(shape-1) e^(-rate x)).
///
/// Marsaglia–Tsang squeeze; for shape < 1 the draw at shape + 1 is scaled by
/// U^(1/shape).
pub fn sample_gamma(stream: &mut RngStream, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    if shape < 1.0 {
        let boost = stream.open01().powf(1.0 / shape);
        return marsaglia_tsang(stream, shape + 1.0) * boost / rate;
    }
    marsaglia_tsang(stream, shape) / rate
}

fn marsaglia_tsang(stream: &mut RngStream, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.standard_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = stream.open01();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-14);
        let half = 0.5 * std::f64::consts::PI.ln();
        assert!((ln_gamma(0.5).unwrap() - half).abs() < 1e-13);
        assert!((ln_gamma(6.0).unwrap() - 120f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut log_fact = 0.0f64;
        for n in 1..=170u32 {
            // Γ(n + 1) = n!
            log_fact += (n as f64).ln();
            let got = ln_gamma(n as f64 + 1.0).unwrap();
            assert!(
                (got - log_fact).abs() <= 1e-12 * log_fact.abs().max(1.0),
                "n = {n}: {got} vs {log_fact}"
            );
        }
    }

    #[test]
    fn domain_errors() {
        for bad in [0.0, -1.0, f64::NAN, f64::NEG_INFINITY] {
            assert!(matches!(ln_gamma(bad), Err(Error::Domain(_))));
            assert!(matches!(digamma(bad), Err(Error::Domain(_))));
            assert!(matches!(trigamma(bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0).unwrap() + EULER).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER)).abs() < 1e-12);
        let closed = -EULER - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - closed).abs() < 1e-12);
        assert!((closed - (-1.963_510_026_0)).abs() < 1e-10);
    }

    #[test]
    fn digamma_recurrence() {
        for x in [0.1, 1.0, 5.0, 50.0] {
            let diff = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((diff - 1.0 / x).abs() < 1e-10, "x = {x}");
        }
    }

    #[test]
    fn digamma_is_finite_difference_of_ln_gamma() {
        let h = 1e-5;
        let mut x = 0.05f64;
        while x < 2000.0 {
            let fd = (ln_gamma(x + h).unwrap() - ln_gamma(x - h).unwrap()) / (2.0 * h);
            assert!((fd - digamma(x).unwrap()).abs() < 1e-5, "x = {x}");
            x *= 1.7;
        }
    }

    #[test]
    fn trigamma_known_values() {
        let basel = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0).unwrap() - basel).abs() < 1e-12);
        assert!((trigamma(2.0).unwrap() - (basel - 1.0)).abs() < 1e-12);
        // ψ′(10) = π²/6 − Σ_{k=1}^{9} 1/k²
        let oracle = basel - (1..10).map(|k| 1.0 / (k * k) as f64).sum::<f64>();
        assert!((trigamma(10.0).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.105_166_335_7).abs() < 1e-10);
    }

    #[test]
    fn trigamma_positive_decreasing_and_matches_digamma_slope() {
        let h = 1e-5;
        let mut x = 0.01f64;
        while x < 1e5 {
            let t = trigamma(x).unwrap();
            assert!(t > 0.0);
            assert!(t > trigamma(x + 1.0).unwrap());
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            if x > 0.1 {
                assert!((fd - t).abs() < 1e-5 * t.max(1.0), "x = {x}");
            }
            x *= 1.9;
        }
    }

    #[test]
    fn split_streams_are_stable_and_distinct() {
        let root = RngStream::new(7);
        let mut consumed = root.clone();
        for _ in 0..10 {
            consumed.next_u64();
        }
        let a: Vec<u64> = (0..4).map(|_| root.split(3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(root.split(3).next_u64(), consumed.split(3).next_u64());
        let firsts: std::collections::HashSet<u64> =
            (0..1000).map(|i| root.split(i).next_u64()).collect();
        assert_eq!(firsts.len(), 1000);
    }

    #[test]
    fn gamma_draws_reproduce_bit_for_bit() {
        let draw = |seed| {
            let mut s = RngStream::new(seed);
            (0..1000)
                .map(|_| sample_gamma(&mut s, 0.7, 2.0).to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn gamma_mean_and_variance() {
        let mut s = RngStream::new(2024);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_gamma(&mut s, 3.0, 3.0)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gamma_small_shape_mean() {
        let mut s = RngStream::new(99);
        let n = 400_000;
        let mean = (0..n).map(|_| sample_gamma(&mut s, 0.3, 1.5)).sum::<f64>() / n as f64;
        assert!((mean - 0.2).abs() < 0.005, "mean {mean}");
    }
}

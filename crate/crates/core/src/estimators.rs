//! Roughness estimators sharing one outcome contract: log-cumulant (LCUM)
//! inversion, maximum likelihood in α with the unit-mean tie, and the trained
//! network, plus per-pixel map estimation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::{clamp_zeros, log_moments, pooled_moment_tensor, PaddingPolicy};
use crate::gi0::{Raster, SampleSet};
use crate::network::{conv_forward, MlpModel, RoughnessMap};
use crate::numerics::{digamma_unchecked, ln_gamma_unchecked, trigamma_unchecked};

/// Estimates outside [SUCCESS_MIN, SUCCESS_MAX] count as failures.
pub const SUCCESS_MIN: f64 = -15.0;
pub const SUCCESS_MAX: f64 = -1.5;

/// Search interval for −α̂ in the LCUM inversion.
const LCUM_LOWER: f64 = 1.0001;
const LCUM_UPPER: f64 = 1e6;

/// Likelihood search interval for α̂ (robust MLE) and Newton start.
const MLE_LOWER: f64 = -15.0;
const MLE_UPPER: f64 = -1.0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Success,
    OutOfRange,
    NoConvergence,
    DegenerateInput,
}

impl Status {
    pub const ALL: [Status; 4] = [
        Status::Success,
        Status::OutOfRange,
        Status::NoConvergence,
        Status::DegenerateInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Status::Success => "Success",
            Status::OutOfRange => "OutOfRange",
            Status::NoConvergence => "NoConvergence",
            Status::DegenerateInput => "DegenerateInput",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An estimate tagged with its status. Failed estimates keep the raw value
/// (when one exists) for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationOutcome {
    pub alpha_hat: Option<f64>,
    pub status: Status,
    pub iterations: u32,
    /// Wall-clock seconds spent in the estimator.
    pub elapsed: f64,
}

impl EstimationOutcome {
    fn classified(alpha: f64, iterations: u32) -> Self {
        let status = if (SUCCESS_MIN..=SUCCESS_MAX).contains(&alpha) {
            Status::Success
        } else {
            Status::OutOfRange
        };
        Self {
            alpha_hat: Some(alpha),
            status,
            iterations,
            elapsed: 0.0,
        }
    }

    fn failed(alpha_hat: Option<f64>, status: Status, iterations: u32) -> Self {
        Self {
            alpha_hat,
            status,
            iterations,
            elapsed: 0.0,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }

    /// The estimate when the status is `Success`.
    pub fn success_value(&self) -> Option<f64> {
        self.alpha_hat.filter(|_| self.is_success())
    }

    fn timed(mut self, start: Instant) -> Self {
        self.elapsed = start.elapsed().as_secs_f64();
        self
    }
}

/// Mean and (population) variance of log z.
fn log_cumulants(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let logs: Vec<f64> = values.iter().map(|z| z.ln()).collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Solves ψ′(−α) = κ2 − ψ′(L) for α by bisection on −α ∈ (1.0001, 10⁶).
pub fn invert_log_cumulant(kappa2: f64, looks: u32) -> EstimationOutcome {
    let target = kappa2 - trigamma_unchecked(looks as f64);
    if !(target > 0.0) || !target.is_finite() {
        return EstimationOutcome::failed(None, Status::DegenerateInput, 0);
    }
    if target >= trigamma_unchecked(LCUM_LOWER) {
        return EstimationOutcome::failed(Some(-LCUM_LOWER), Status::OutOfRange, 0);
    }
    if target <= trigamma_unchecked(LCUM_UPPER) {
        return EstimationOutcome::failed(Some(-LCUM_UPPER), Status::OutOfRange, 0);
    }
    // ψ′ is decreasing: ψ′(lo) > target > ψ′(hi).
    let (mut lo, mut hi) = (LCUM_LOWER, LCUM_UPPER);
    let mut iterations = 0;
    while hi - lo > 1e-13 * hi && iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if trigamma_unchecked(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let out = EstimationOutcome::classified(-root, iterations);
    if root >= LCUM_UPPER * (1.0 - 1e-12) {
        return EstimationOutcome::failed(Some(-root), Status::OutOfRange, iterations);
    }
    out
}

/// Method-of-log-cumulants estimate of α from the sample log-variance.
pub fn estimate_lcum(sample: &SampleSet, looks: u32) -> EstimationOutcome {
    let start = Instant::now();
    let (_, kappa2) = log_cumulants(sample.values());
    invert_log_cumulant(kappa2, looks).timed(start)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MleMode {
    /// Newton on the score from α = −1.0001, as a stand-in for a generic
    /// nonlinear solver started at that point.
    PaperFaithful,
    /// Bracketed maximization over [−15, −1.0001].
    Robust,
}

impl FromStr for MleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper-faithful" => Ok(MleMode::PaperFaithful),
            "robust" => Ok(MleMode::Robust),
            other => Err(Error::param(format!("unknown MLE mode `{other}` (paper|robust)"))),
        }
    }
}

/// Log-likelihood of a unit-mean-normalized sample in α with γ = −α − 1.
pub struct TiedLikelihood {
    z: Vec<f64>,
    looks: f64,
    sum_log_z: f64,
}

impl TiedLikelihood {
    /// Divides the sample by its mean.
    pub fn new(sample: &SampleSet, looks: u32) -> Self {
        let values = sample.values();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let z: Vec<f64> = values.iter().map(|v| v / mean).collect();
        let sum_log_z = z.iter().map(|v| v.ln()).sum();
        Self {
            z,
            looks: looks as f64,
            sum_log_z,
        }
    }

    fn n(&self) -> f64 {
        self.z.len() as f64
    }

    /// ℓ(α); requires α < −1.
    pub fn value(&self, alpha: f64) -> f64 {
        let l = self.looks;
        let gamma = -alpha - 1.0;
        let per_sample = l * l.ln() + ln_gamma_unchecked(l - alpha)
            - alpha * gamma.ln()
            - ln_gamma_unchecked(-alpha)
            - ln_gamma_unchecked(l);
        let tail: f64 = self.z.iter().map(|z| (gamma + l * z).ln()).sum();
        self.n() * per_sample + (l - 1.0) * self.sum_log_z + (alpha - l) * tail
    }

    /// ℓ′(α).
    pub fn score(&self, alpha: f64) -> f64 {
        let l = self.looks;
        let gamma = -alpha - 1.0;
        let per_sample = digamma_unchecked(-alpha) - digamma_unchecked(l - alpha) - gamma.ln()
            + alpha / gamma;
        let tail: f64 = self
            .z
            .iter()
            .map(|z| {
                let s = gamma + l * z;
                s.ln() - (alpha - l) / s
            })
            .sum();
        self.n() * per_sample + tail
    }

    /// ℓ″(α).
    pub fn curvature(&self, alpha: f64) -> f64 {
        let l = self.looks;
        let gamma = -alpha - 1.0;
        let per_sample = trigamma_unchecked(l - alpha) - trigamma_unchecked(-alpha) + 1.0 / gamma
            - 1.0 / (gamma * gamma);
        let tail: f64 = self
            .z
            .iter()
            .map(|z| {
                let s = gamma + l * z;
                -1.0 / s - (l * z - 1.0 - l) / (s * s)
            })
            .sum();
        self.n() * per_sample + tail
    }
}

/// α maximizing the tied likelihood on a uniform grid with the given step
/// over [−15, −1.0001]. Brute force; meant for cross-checking.
pub fn likelihood_grid_argmax(sample: &SampleSet, looks: u32, step: f64) -> f64 {
    let lik = TiedLikelihood::new(sample, looks);
    let count = ((MLE_UPPER - MLE_LOWER) / step).floor() as usize;
    let mut best = (f64::NEG_INFINITY, MLE_LOWER);
    for i in 0..=count + 1 {
        let a = (MLE_LOWER + i as f64 * step).min(MLE_UPPER);
        let v = lik.value(a);
        if v > best.0 {
            best = (v, a);
        }
    }
    best.1
}

/// Maximum-likelihood estimate of α with γ tied and the sample normalized to unit mean.
pub fn estimate_mle(sample: &SampleSet, looks: u32, mode: MleMode) -> EstimationOutcome {
    let start = Instant::now();
    let lik = TiedLikelihood::new(sample, looks);
    let out = match mode {
        MleMode::PaperFaithful => mle_newton(&lik),
        MleMode::Robust => mle_bracketed(&lik),
    };
    out.timed(start)
}

fn mle_newton(lik: &TiedLikelihood) -> EstimationOutcome {
    let mut alpha = MLE_UPPER;
    for it in 1..=100u32 {
        let score = lik.score(alpha);
        if !score.is_finite() {
            return EstimationOutcome::failed(Some(alpha), Status::NoConvergence, it);
        }
        if score.abs() < 1e-8 {
            return EstimationOutcome::classified(alpha, it);
        }
        let next = alpha - score / lik.curvature(alpha);
        if !next.is_finite() || next <= -1e6 || next >= -1.0 {
            return EstimationOutcome::failed(Some(next), Status::NoConvergence, it);
        }
        alpha = next;
    }
    EstimationOutcome::failed(Some(alpha), Status::NoConvergence, 100)
}

const MLE_GRID: usize = 56;

fn mle_bracketed(lik: &TiedLikelihood) -> EstimationOutcome {
    let step = (MLE_UPPER - MLE_LOWER) / MLE_GRID as f64;
    let grid: Vec<f64> = (0..=MLE_GRID)
        .map(|i| if i == MLE_GRID { MLE_UPPER } else { MLE_LOWER + i as f64 * step })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&a| lik.value(a)).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });
    let mut evaluations = grid.len() as u32;

    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(MLE_GRID)];
    let (s_lo, s_hi) = (lik.score(lo), lik.score(hi));
    evaluations += 2;
    let alpha = if s_lo > 0.0 && s_hi < 0.0 {
        let (root, iters) = brent_root(|a| lik.score(a), lo, hi, s_lo, s_hi, 1e-12);
        evaluations += iters;
        root
    } else if best == 0 && s_lo <= 0.0 {
        MLE_LOWER
    } else if best == MLE_GRID && s_hi >= 0.0 {
        MLE_UPPER
    } else {
        let (arg, iters) = golden_max(|a| lik.value(a), lo, hi, 1e-10);
        evaluations += iters;
        arg
    };
    if (alpha - MLE_LOWER).abs() <= 1e-6 || (alpha - MLE_UPPER).abs() <= 1e-6 {
        return EstimationOutcome::failed(Some(alpha), Status::OutOfRange, evaluations);
    }
    EstimationOutcome::classified(alpha, evaluations)
}

/// Golden-section maximization on [a, b]. Returns (argmax, evaluations).
fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, xtol: f64) -> (f64, u32) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a, b);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut evals = 2;
    while (b - a).abs() > xtol && evals < 200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    (0.5 * (a + b), evals)
}

/// Brent's root finder on a sign-changing bracket. Returns (root, evaluations).
fn brent_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, fa: f64, fb: f64, xtol: f64) -> (f64, u32) {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut bisected = true;
    let mut evals = 0;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() < xtol {
            break;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let outside = !((s > lo.min(b)) && (s < lo.max(b)));
        let slow = if bisected {
            (s - b).abs() >= (b - c).abs() / 2.0 || (b - c).abs() < xtol
        } else {
            (s - b).abs() >= (c - d).abs() / 2.0 || (c - d).abs() < xtol
        };
        bisected = outside || slow;
        if bisected {
            s = (a + b) / 2.0;
        }
        let fs = f(s);
        evals += 1;
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    (b, evals)
}

/// Network estimate: the model applied to the sample's log-moments.
pub fn estimate_nn(model: &MlpModel, sample: &SampleSet) -> Result<EstimationOutcome> {
    let start = Instant::now();
    let moments = log_moments(sample.values(), model.meta().moments)?;
    let alpha = model.forward(&moments)?;
    Ok(EstimationOutcome::classified(alpha, 0).timed(start))
}

/// A roughness map with its timing breakdown.
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub map: RoughnessMap,
    /// Zero pixels replaced before taking logs.
    pub clamped_zeros: usize,
    pub moments_seconds: f64,
    pub inference_seconds: f64,
}

impl MapEstimate {
    pub fn elapsed(&self) -> f64 {
        self.moments_seconds + self.inference_seconds
    }
}

/// Per-pixel roughness: pooled log-moments followed by 1×1-conv inference.
/// Values are not clipped to the success band.
pub fn estimate_map(
    model: &MlpModel,
    raster: &Raster,
    kernel: usize,
    pad: &PaddingPolicy,
) -> Result<MapEstimate> {
    let start = Instant::now();
    let (clamped, clamped_zeros) = clamp_zeros(raster);
    let tensor = pooled_moment_tensor(&clamped, model.meta().moments, kernel, pad)?;
    let moments_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let map = conv_forward(model, &tensor)?;
    Ok(MapEstimate {
        map,
        clamped_zeros,
        moments_seconds,
        inference_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gi0::{sample, theoretical_log_cumulants, Gi0Params};
    use crate::network::ModelMeta;
    use crate::numerics::RngStream;

    fn draw(alpha: f64, looks: u32, n: usize, seed: u64) -> SampleSet {
        let p = Gi0Params::unit_mean(alpha, looks).unwrap();
        sample(&mut RngStream::new(seed), &p, n).unwrap()
    }

    #[test]
    fn lcum_degenerate_on_constant_sample() {
        let s = SampleSet::new(vec![2.0; 3], None).unwrap();
        let out = estimate_lcum(&s, 1);
        assert_eq!(out.status, Status::DegenerateInput);
        assert_eq!(out.alpha_hat, None);
    }

    #[test]
    fn lcum_noiseless_inversion() {
        for looks in [1, 3, 8] {
            for alpha in [-1.5, -3.0, -7.0, -15.0] {
                let p = Gi0Params::unit_mean(alpha, looks).unwrap();
                let (_, k2) = theoretical_log_cumulants(&p);
                let out = invert_log_cumulant(k2, looks);
                assert!((out.alpha_hat.unwrap() - alpha).abs() < 1e-6, "{alpha} {looks}");
            }
        }
    }

    #[test]
    fn lcum_bracket_ends_are_out_of_range() {
        let near_one = invert_log_cumulant(trigamma_unchecked(1.0) + 50.0, 1);
        assert_eq!(near_one.status, Status::OutOfRange);
        assert_eq!(near_one.alpha_hat, Some(-LCUM_LOWER));
        let tiny = invert_log_cumulant(trigamma_unchecked(1.0) + 1e-9, 1);
        assert_eq!(tiny.status, Status::OutOfRange);
        assert_eq!(tiny.alpha_hat, Some(-LCUM_UPPER));
    }

    #[test]
    fn likelihood_derivatives_match_finite_differences() {
        for (alpha, looks) in [(-2.0, 1), (-7.0, 3), (-12.0, 8)] {
            let s = draw(alpha, looks, 50, 4);
            let lik = TiedLikelihood::new(&s, looks);
            for a in [-14.0, -6.5, -2.2, -1.3] {
                let h = 1e-5;
                let fd1 = (lik.value(a + h) - lik.value(a - h)) / (2.0 * h);
                let fd2 = (lik.score(a + h) - lik.score(a - h)) / (2.0 * h);
                assert!((fd1 - lik.score(a)).abs() < 1e-5 * fd1.abs().max(1.0), "{a}");
                assert!((fd2 - lik.curvature(a)).abs() < 1e-5 * fd2.abs().max(1.0), "{a}");
            }
        }
    }

    #[test]
    fn tied_likelihood_matches_density_sum() {
        let s = draw(-4.0, 2, 30, 8);
        let lik = TiedLikelihood::new(&s, 2);
        let mean = s.values().iter().sum::<f64>() / 30.0;
        for a in [-9.0, -3.0] {
            let p = Gi0Params::unit_mean(a, 2).unwrap();
            let direct: f64 = s
                .values()
                .iter()
                .map(|v| crate::gi0::log_density(v / mean, &p).unwrap())
                .sum();
            assert!((direct - lik.value(a)).abs() < 1e-9 * direct.abs());
        }
    }

    #[test]
    fn robust_mle_matches_grid() {
        for seed in 0..10 {
            let s = draw(-5.0, 1, 49, seed);
            let out = estimate_mle(&s, 1, MleMode::Robust);
            let grid = likelihood_grid_argmax(&s, 1, 0.001);
            assert!((out.alpha_hat.unwrap() - grid).abs() < 0.002, "seed {seed}");
        }
    }

    #[test]
    fn mle_and_lcum_are_scale_invariant() {
        let s = draw(-3.0, 1, 121, 12);
        let scaled = SampleSet::new(s.values().iter().map(|v| v * 37.5).collect(), None).unwrap();
        for mode in [MleMode::Robust, MleMode::PaperFaithful] {
            let (a, b) = (estimate_mle(&s, 1, mode), estimate_mle(&scaled, 1, mode));
            assert_eq!(a.status, b.status);
            if let (Some(x), Some(y)) = (a.alpha_hat, b.alpha_hat) {
                assert!((x - y).abs() < 1e-9, "{mode:?}: {x} vs {y}");
            }
        }
        let (a, b) = (estimate_lcum(&s, 1), estimate_lcum(&scaled, 1));
        assert!((a.alpha_hat.unwrap() - b.alpha_hat.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn nn_on_constant_sample_is_finite() {
        let mut meta = ModelMeta::new(2, 1);
        meta.seed = 1;
        let m = MlpModel::xavier(&[2, 8, 4, 1], meta, &mut RngStream::new(1)).unwrap();
        let s = SampleSet::new(vec![1.0; 5], None).unwrap();
        let out = estimate_nn(&m, &s).unwrap();
        assert!(out.alpha_hat.unwrap().is_finite());
        assert_ne!(out.status, Status::NoConvergence);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("paper".parse::<MleMode>().unwrap(), MleMode::PaperFaithful);
        assert_eq!("robust".parse::<MleMode>().unwrap(), MleMode::Robust);
        assert!("fsolve".parse::<MleMode>().is_err());
    }

    #[test]
    fn constant_raster_gives_constant_map() {
        let m = MlpModel::xavier(&[2, 8, 4, 1], ModelMeta::new(2, 1), &mut RngStream::new(2)).unwrap();
        let r = Raster::filled(9, 7, 0.8).unwrap();
        let est = estimate_map(&m, &r, 3, &PaddingPolicy::Reflect).unwrap();
        assert!(est.map.pixels().windows(2).all(|w| w[0] == w[1]));
        assert!(est.elapsed() >= 0.0);
    }
}

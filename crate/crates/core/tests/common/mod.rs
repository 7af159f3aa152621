//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use sar_roughness::gi0::Raster;

/// Lanczos (g = 7, n = 9) log-gamma, separate from the library's Stirling path.
pub fn lanczos_ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x): series below a + 1,
/// Lentz continued fraction above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - lanczos_ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * log_prefix.exp()
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - log_prefix.exp() * h
    }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over [a, b], split into `pieces`
/// panels so narrow peaks are not missed by the first coarse estimate.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + h * i as f64, a + h * (i + 1) as f64);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// Half-sample symmetric mirror of an index into 0..n.
pub fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

pub fn clamp_index(i: i64, n: i64) -> usize {
    i.clamp(0, n - 1) as usize
}

/// Mean of (ln v)^m over the k×k window anchored at (x − k/2, y − k/2),
/// with out-of-range indices resolved by `index`.
pub fn window_moment(
    raster: &Raster,
    x: usize,
    y: usize,
    k: usize,
    m: usize,
    index: fn(i64, i64) -> usize,
) -> f64 {
    let half = (k / 2) as i64;
    let (w, h) = (raster.width() as i64, raster.height() as i64);
    let mut sum = 0.0;
    for dy in 0..k as i64 {
        for dx in 0..k as i64 {
            let xx = index(x as i64 - half + dx, w);
            let yy = index(y as i64 - half + dy, h);
            sum += raster.get(xx, yy).ln().powi(m as i32);
        }
    }
    sum / (k * k) as f64
}

/// Mean and standard error of a slice.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

use sar_roughness::features::MomentVector;
use sar_roughness::network::{MlpModel, ModelMeta};
use sar_roughness::numerics::RngStream;

/// A randomly initialized `[nm, 8, 4, 1]` model with inflated weights so the
/// tanh units leave their linear regime.
pub fn random_model(nm: usize, stream: &mut RngStream) -> MlpModel {
    let mut m = MlpModel::xavier(&MlpModel::default_architecture(nm), ModelMeta::new(nm, 1), stream).unwrap();
    let params: Vec<f64> = m
        .parameters()
        .iter()
        .map(|p| p * 1.5 + 0.1 * stream.standard_normal())
        .collect();
    m.set_parameters(&params).unwrap();
    m
}

fn batch_loss(model: &MlpModel, batch: &[(MomentVector, f64)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| (model.forward(x).unwrap() - y).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

/// Largest relative disagreement between backprop and central differences
/// (h = 1e-6) over every parameter; entries where both are below 1e-7 count
/// as agreeing.
pub fn gradient_check(seed: u64) -> f64 {
    let mut s = RngStream::new(seed);
    let nm = if seed % 2 == 0 { 2 } else { 4 };
    let model = random_model(nm, &mut s);
    let size = 1 + (s.open01() * 16.0) as usize;
    let batch: Vec<(MomentVector, f64)> = (0..size)
        .map(|_| {
            let x = (0..nm).map(|j| s.standard_normal() * (j + 1) as f64).collect();
            (MomentVector::new(x).unwrap(), -15.0 + 13.5 * s.open01())
        })
        .collect();
    let analytic = model.backward(&batch).unwrap().flatten();
    let base = model.parameters();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let mut probe = model.clone();
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_parameters(&p).unwrap();
        let up = batch_loss(&probe, &batch);
        p[i] = base[i] - h;
        probe.set_parameters(&p).unwrap();
        let down = batch_loss(&probe, &batch);
        let fd = (up - down) / (2.0 * h);
        let diff = (g - fd).abs();
        if diff < 1e-7 {
            continue;
        }
        worst = worst.max(diff / g.abs().max(fd.abs()));
    }
    worst
}

/// Largest |conv_forward − per-pixel predict| for a random model and tensor.
pub fn conv_equivalence_gap(seed: u64) -> f64 {
    use sar_roughness::features::MomentTensor;
    use sar_roughness::network::conv_forward;
    let mut s = RngStream::new(seed);
    let nm = 1 + (seed % 4) as usize;
    let model = random_model(nm, &mut s);
    let w = 1 + (s.open01() * 32.0) as usize;
    let h = 1 + (s.open01() * 32.0) as usize;
    let data: Vec<f64> = (0..nm * w * h).map(|_| 3.0 * s.standard_normal()).collect();
    let tensor = MomentTensor::new(nm, w, h, data).unwrap();
    let map = conv_forward(&model, &tensor).unwrap();
    let mut tube = vec![0.0; nm];
    let mut gap: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            tensor.tube_into(x, y, &mut tube);
            gap = gap.max((map.get(x, y) - model.predict(&tube).unwrap()).abs());
        }
    }
    gap
}

/// |robust MLE − 0.001-grid argmax| for one random small sample.
pub fn robust_grid_gap(seed: u64) -> f64 {
    use sar_roughness::estimators::{estimate_mle, likelihood_grid_argmax, MleMode};
    use sar_roughness::gi0::{sample, Gi0Params};
    let mut s = RngStream::new(seed);
    let alpha = -1.5 - 13.5 * s.open01();
    let looks = [1, 3, 8][(seed % 3) as usize];
    let n = if seed % 2 == 0 { 25 } else { 121 };
    let p = Gi0Params::unit_mean(alpha, looks).unwrap();
    let set = sample(&mut s, &p, n).unwrap();
    let robust = estimate_mle(&set, looks, MleMode::Robust)
        .alpha_hat
        .expect("robust mode always reports its maximizer");
    (robust - likelihood_grid_argmax(&set, looks, 1e-3)).abs()
}

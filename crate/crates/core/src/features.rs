//! Sample log-moments of a sample set, and the per-pixel windowed log-moment
//! tensor of a raster.
//!
//! Window sums come from summed-area tables, one per channel, so the cost of
//! [`pooled_moment_tensor`] does not depend on the kernel size. The tables are
//! accumulated in double-double arithmetic: on megapixel rasters plain f64
//! prefix sums lose several digits once large corner values are subtracted.

use crate::error::{Error, Result};
use crate::gi0::{sample, Gi0Params, Raster, SampleSet};
use crate::numerics::RngStream;

/// The first `order` sample log-moments; entry `m - 1` holds μ_m.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    moments: Vec<f64>,
}

impl MomentVector {
    pub fn new(moments: Vec<f64>) -> Result<Self> {
        if moments.is_empty() {
            return Err(Error::param("moment vector must have order >= 1"));
        }
        if moments.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("moment vector has non-finite entries"));
        }
        Ok(Self { moments })
    }

    pub fn order(&self) -> usize {
        self.moments.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.moments
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.moments
    }
}

/// μ_m = mean of (log z)^m for m = 1..=order.
pub fn compute_moments(sample: &SampleSet, order: usize) -> Result<MomentVector> {
    log_moments(sample.values(), order)
}

/// As [`compute_moments`] on a raw slice.
///
/// Logs are summed in sorted order, which makes the result exactly invariant
/// under permutations of `values`.
pub fn log_moments(values: &[f64], order: usize) -> Result<MomentVector> {
    if order == 0 {
        return Err(Error::param("moment order must be at least 1"));
    }
    if values.is_empty() {
        return Err(Error::domain("cannot take moments of an empty sample"));
    }
    let mut logs = Vec::with_capacity(values.len());
    for &z in values {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::domain(format!("log-moments need positive values, got {z}")));
        }
        logs.push(z.ln());
    }
    logs.sort_unstable_by(f64::total_cmp);
    let mut sums = vec![0.0; order];
    for &l in &logs {
        let mut power = 1.0;
        for s in sums.iter_mut() {
            power *= l;
            *s += power;
        }
    }
    let n = logs.len() as f64;
    MomentVector::new(sums.into_iter().map(|s| s / n).collect())
}

/// How the raster is extended beyond its border before pooling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaddingPolicy {
    /// Fresh G_I^0 draws from `params`, generated from `seed`.
    SyntheticSamples { params: Gi0Params, seed: u64 },
    /// Mirror about the border, repeating the edge pixel (… b a | a b c | c b …).
    Reflect,
    /// Repeat the edge pixel.
    Replicate,
}

/// Channel-major stack of per-pixel log-moment maps:
/// `data[(m * height + y) * width + x]` is μ_{m+1} at (x, y).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTensor {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl MomentTensor {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::param("moment tensor dimensions must be positive"));
        }
        if data.len() != channels * width * height {
            return Err(Error::param("moment tensor data length does not match its shape"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("moment tensor has non-finite entries"));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Plane of channel `m` (0-based), row-major.
    pub fn channel(&self, m: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[m * plane..(m + 1) * plane]
    }

    #[inline]
    pub fn get(&self, m: usize, x: usize, y: usize) -> f64 {
        self.data[(m * self.height + y) * self.width + x]
    }

    /// Copies the channel tube at (x, y) into `out`.
    #[inline]
    pub fn tube_into(&self, x: usize, y: usize, out: &mut [f64]) {
        let plane = self.width * self.height;
        let offset = y * self.width + x;
        for (m, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.data[m * plane + offset];
        }
    }
}

/// Replaces exact zeros with the smallest positive normal f64 and returns
/// how many were replaced. Negative or non-finite pixels are left for the
/// moment computation to reject.
pub fn clamp_zeros(raster: &Raster) -> (Raster, usize) {
    let mut count = 0;
    let pixels = raster
        .pixels()
        .iter()
        .map(|&v| {
            if v == 0.0 {
                count += 1;
                f64::MIN_POSITIVE
            } else {
                v
            }
        })
        .collect();
    let out = Raster::new(raster.width(), raster.height(), pixels)
        .expect("clamping keeps the shape and finiteness");
    (out, count)
}

/// Index of the source pixel for a (possibly out-of-range) coordinate.
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Padded grid of log-intensities.
struct PaddedLogs {
    width: usize,
    height: usize,
    logs: Vec<f64>,
}

fn positive_log(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::domain(format!("{what} must be positive to take logs, got {v}")))
    }
}

fn padded_logs(raster: &Raster, pad: usize, policy: &PaddingPolicy) -> Result<PaddedLogs> {
    let (w, h) = (raster.width(), raster.height());
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let mut logs = vec![0.0; pw * ph];

    let mut src_logs = Vec::with_capacity(w * h);
    for &v in raster.pixels() {
        src_logs.push(positive_log(v, "pixel")?);
    }

    match policy {
        PaddingPolicy::SyntheticSamples { params, seed } => {
            let ring = pw * ph - w * h;
            let draws = if ring > 0 {
                let mut stream = RngStream::new(*seed);
                sample(&mut stream, params, ring)?.into_values()
            } else {
                Vec::new()
            };
            let mut next = draws.into_iter();
            for py in 0..ph {
                for px in 0..pw {
                    let inside = (pad..pad + w).contains(&px) && (pad..pad + h).contains(&py);
                    logs[py * pw + px] = if inside {
                        src_logs[(py - pad) * w + (px - pad)]
                    } else {
                        positive_log(next.next().expect("ring size matches draws"), "padding draw")?
                    };
                }
            }
        }
        PaddingPolicy::Reflect | PaddingPolicy::Replicate => {
            let map: fn(isize, usize) -> usize = if matches!(policy, PaddingPolicy::Reflect) {
                mirror
            } else {
                clamp_index
            };
            let cols: Vec<usize> = (0..pw).map(|px| map(px as isize - pad as isize, w)).collect();
            for py in 0..ph {
                let sy = map(py as isize - pad as isize, h);
                let src = &src_logs[sy * w..(sy + 1) * w];
                let dst = &mut logs[py * pw..(py + 1) * pw];
                for (d, &sx) in dst.iter_mut().zip(&cols) {
                    *d = src[sx];
                }
            }
        }
    }
    Ok(PaddedLogs {
        width: pw,
        height: ph,
        logs,
    })
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Double-double summed-area table with a zero guard row and column:
/// entry (x, y) holds the sum over the half-open rectangle [0, x) × [0, y).
struct SummedArea {
    stride: usize,
    hi: Vec<f64>,
    lo: Vec<f64>,
}

impl SummedArea {
    fn build(values: &[f64], width: usize, height: usize, scratch: Option<SummedArea>) -> Self {
        let stride = width + 1;
        let len = stride * (height + 1);
        let (mut hi, mut lo) = match scratch {
            Some(s) if s.hi.len() == len => (s.hi, s.lo),
            _ => (vec![0.0; len], vec![0.0; len]),
        };
        hi[..stride].fill(0.0);
        lo[..stride].fill(0.0);
        for y in 0..height {
            let row = &values[y * width..(y + 1) * width];
            let (above, current) = (y * stride, (y + 1) * stride);
            hi[current] = 0.0;
            lo[current] = 0.0;
            let (mut run_hi, mut run_lo) = (0.0, 0.0);
            for (x, &v) in row.iter().enumerate() {
                let (s, e) = two_sum(run_hi, v);
                run_hi = s;
                run_lo += e;
                let (s, e) = two_sum(hi[above + x + 1], run_hi);
                hi[current + x + 1] = s;
                lo[current + x + 1] = lo[above + x + 1] + run_lo + e;
            }
        }
        Self { stride, hi, lo }
    }

    /// Sum over [x0, x1) × [y0, y1).
    #[inline]
    fn window(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let a = y1 * self.stride + x1;
        let b = y0 * self.stride + x1;
        let c = y1 * self.stride + x0;
        let d = y0 * self.stride + x0;
        let (s, e1) = two_sum(self.hi[a], -self.hi[b]);
        let (s, e2) = two_sum(s, -self.hi[c]);
        let (s, e3) = two_sum(s, self.hi[d]);
        let lo = self.lo[a] - self.lo[b] - self.lo[c] + self.lo[d];
        s + (e1 + e2 + e3 + lo)
    }
}

/// Per-pixel log-moments of orders 1..=order over k×k windows.
///
/// The window of pixel (x, y) starts at (x − ⌊k/2⌋, y − ⌊k/2⌋), so even
/// kernels lean toward the top-left. The raster is padded by ⌈k/2⌉ on every
/// side according to `pad`, keeping the output the same size as the input.
/// With `Reflect` or `Replicate`, ⌊k/2⌋ may not exceed the shorter raster side.
pub fn pooled_moment_tensor(
    raster: &Raster,
    order: usize,
    kernel: usize,
    pad: &PaddingPolicy,
) -> Result<MomentTensor> {
    if order == 0 {
        return Err(Error::param("moment order must be at least 1"));
    }
    if kernel == 0 {
        return Err(Error::param("kernel size must be at least 1"));
    }
    let (w, h) = (raster.width(), raster.height());
    let half = kernel / 2;
    if !matches!(pad, PaddingPolicy::SyntheticSamples { .. }) && half > w.min(h) {
        return Err(Error::param(format!(
            "kernel {kernel} is too large for a {w}x{h} raster (half-width must be <= {})",
            w.min(h)
        )));
    }
    let pad_width = kernel.div_ceil(2);
    let padded = padded_logs(raster, pad_width, pad)?;
    let offset = pad_width - half;
    let inv_area = 1.0 / (kernel * kernel) as f64;

    let mut data = vec![0.0; order * w * h];
    let mut power = padded.logs.clone();
    let mut table: Option<SummedArea> = None;
    for m in 0..order {
        if m > 0 {
            for (p, &l) in power.iter_mut().zip(&padded.logs) {
                *p *= l;
            }
        }
        let sat = SummedArea::build(&power, padded.width, padded.height, table.take());
        let plane = &mut data[m * w * h..(m + 1) * w * h];
        for y in 0..h {
            let y0 = y + offset;
            for x in 0..w {
                let x0 = x + offset;
                plane[y * w + x] = sat.window(x0, y0, x0 + kernel, y0 + kernel) * inv_area;
            }
        }
        table = Some(sat);
    }
    MomentTensor::new(order, w, h, data)
}

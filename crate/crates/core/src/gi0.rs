//! The G_I^0 intensity law: density, sampling, log-cumulants and synthetic
//! data generation (training datasets and multi-region mosaics).

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{
    digamma_unchecked, ln_gamma_unchecked, sample_gamma, trigamma_unchecked, RngStream,
};

/// Lowest roughness used for generation and the lower end of the success band.
pub const ALPHA_MIN: f64 = -15.0;
/// Highest roughness usable under the unit-mean tie γ = −α − 1.
pub const ALPHA_MAX: f64 = -1.0001;

/// Parameters (α, γ, L) of one G_I^0 law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gi0Params {
    pub alpha: f64,
    pub gamma: f64,
    pub looks: u32,
}

impl Gi0Params {
    pub fn new(alpha: f64, gamma: f64, looks: u32) -> Result<Self> {
        if !(alpha < 0.0 && alpha.is_finite()) {
            return Err(Error::domain(format!("roughness must be negative, got {alpha}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::domain(format!("scale must be positive, got {gamma}")));
        }
        if looks == 0 {
            return Err(Error::domain("number of looks must be at least 1"));
        }
        Ok(Self { alpha, gamma, looks })
    }

    /// Unit-mean parameters: γ tied to −α − 1.
    pub fn unit_mean(alpha: f64, looks: u32) -> Result<Self> {
        Self::new(alpha, tie_gamma(alpha)?, looks)
    }

    /// Checks the generation range [ALPHA_MIN, ALPHA_MAX].
    pub fn check_generation_range(&self) -> Result<()> {
        if self.alpha < ALPHA_MIN || self.alpha > ALPHA_MAX {
            return Err(Error::domain(format!(
                "roughness {} outside the generation range [{ALPHA_MIN}, {ALPHA_MAX}]",
                self.alpha
            )));
        }
        Ok(())
    }

    /// The z-independent part of the log-density.
    pub fn log_normalizer(&self) -> f64 {
        let l = self.looks as f64;
        l * l.ln() + ln_gamma_unchecked(l - self.alpha)
            - self.alpha * self.gamma.ln()
            - ln_gamma_unchecked(-self.alpha)
            - ln_gamma_unchecked(l)
    }
}

/// `γ = −α − 1`, the scale giving a unit-mean law.
pub fn tie_gamma(alpha: f64) -> Result<f64> {
    if alpha < -1.0 && alpha.is_finite() {
        Ok(-alpha - 1.0)
    } else {
        Err(Error::domain(format!("the unit-mean tie needs alpha < -1, got {alpha}")))
    }
}

/// log f(z; α, γ, L).
pub fn log_density(z: f64, p: &Gi0Params) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::domain(format!("density support is z > 0, got {z}")));
    }
    Ok(log_density_with(z, p, p.log_normalizer()))
}

#[inline]
pub(crate) fn log_density_with(z: f64, p: &Gi0Params, normalizer: f64) -> f64 {
    let l = p.looks as f64;
    normalizer + (l - 1.0) * z.ln() + (p.alpha - l) * (p.gamma + l * z).ln()
}

/// Mean and variance of log Z.
pub fn theoretical_log_cumulants(p: &Gi0Params) -> (f64, f64) {
    let l = p.looks as f64;
    let kappa1 = digamma_unchecked(l) - l.ln() - digamma_unchecked(-p.alpha) + p.gamma.ln();
    let kappa2 = trigamma_unchecked(l) + trigamma_unchecked(-p.alpha);
    (kappa1, kappa2)
}

/// A set of positive intensity draws, optionally tagged with the law that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    pub truth: Option<Gi0Params>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>, truth: Option<Gi0Params>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("sample set is empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::domain(format!("sample value {i} is not a positive finite number: {v}")));
        }
        Ok(Self { values, truth })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn draw_values(stream: &mut RngStream, p: &Gi0Params, n: usize) -> Vec<f64> {
    let l = p.looks as f64;
    (0..n)
        .map(|_| {
            let speckle = sample_gamma(stream, l, l);
            let inverse_backscatter = sample_gamma(stream, -p.alpha, p.gamma);
            speckle / inverse_backscatter
        })
        .collect()
}

/// `n` i.i.d. draws Z = X / Y′ with X ~ Gamma(L, L) and Y′ ~ Gamma(−α, γ).
pub fn sample(stream: &mut RngStream, p: &Gi0Params, n: usize) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    p.check_generation_range()?;
    let values = draw_values(stream, p, n);
    // Draws underflow to zero only for absurd parameters; surface that as a domain error.
    SampleSet::new(values, Some(*p))
}

/// One (α, size, repeat) cell of a training dataset.
#[derive(Debug, Clone, Copy)]
struct DatasetEntry {
    alpha: f64,
    size: usize,
}

fn check_grid(alphas: &[f64], sizes: &[usize], repeats: usize) -> Result<()> {
    if alphas.is_empty() || sizes.is_empty() {
        return Err(Error::param("alpha and size grids must be nonempty"));
    }
    if repeats == 0 {
        return Err(Error::param("repeats must be at least 1"));
    }
    if sizes.contains(&0) {
        return Err(Error::param("sample sizes must be positive"));
    }
    for &a in alphas {
        Gi0Params::unit_mean(a, 1)?.check_generation_range()?;
    }
    Ok(())
}

/// Generates `|alphas| * |sizes| * repeats` items, mapping every drawn
/// [`SampleSet`] through `map` as it is produced.
///
/// Item `i` (before shuffling) is drawn from `stream.split(i)`, so contents do
/// not depend on evaluation order. The final order is a permutation drawn from
/// `stream` itself.
pub fn generate_dataset_with<T, F>(
    stream: &mut RngStream,
    alphas: &[f64],
    sizes: &[usize],
    repeats: usize,
    looks: u32,
    map: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(SampleSet) -> Result<T> + Sync,
{
    check_grid(alphas, sizes, repeats)?;
    if looks == 0 {
        return Err(Error::domain("number of looks must be at least 1"));
    }
    let mut entries = Vec::with_capacity(alphas.len() * sizes.len() * repeats);
    for &alpha in alphas {
        for &size in sizes {
            entries.extend((0..repeats).map(|_| DatasetEntry { alpha, size }));
        }
    }
    let root = stream.clone();
    let items = entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let p = Gi0Params::unit_mean(e.alpha, looks)?;
            let mut child = root.split(i as u64);
            map(sample(&mut child, &p, e.size)?)
        })
        .collect::<Result<Vec<T>>>()?;

    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(stream);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("permutation visits each slot once"))
        .collect())
}

/// Synthetic training sets: for each (α, size) pair, `repeats` independent
/// unit-mean sample sets, shuffled deterministically.
pub fn generate_sample_dataset(
    stream: &mut RngStream,
    alphas: &[f64],
    sizes: &[usize],
    repeats: usize,
    looks: u32,
) -> Result<Vec<SampleSet>> {
    generate_dataset_with(stream, alphas, sizes, repeats, looks, Ok)
}

/// A w×h grid of intensities, row-major (`pixels[y * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("raster dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::param(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("pixel {i} is not finite")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

/// Axis-aligned rectangle of a mosaic with its roughness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub alpha: f64,
}

/// Piecewise-constant roughness layout used to synthesize test imagery.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicSpec {
    pub width: usize,
    pub height: usize,
    pub looks: u32,
    pub regions: Vec<Region>,
}

impl MosaicSpec {
    /// A single region covering the whole raster.
    pub fn uniform(width: usize, height: usize, alpha: f64, looks: u32) -> Self {
        Self {
            width,
            height,
            looks,
            regions: vec![Region {
                x: 0,
                y: 0,
                width,
                height,
                alpha,
            }],
        }
    }

    /// Rejects layouts whose rectangles do not tile the raster exactly.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Spec("mosaic dimensions must be positive".into()));
        }
        if self.looks == 0 {
            return Err(Error::Spec("looks must be at least 1".into()));
        }
        if self.regions.is_empty() {
            return Err(Error::Spec("mosaic has no regions".into()));
        }
        let mut cover = vec![0u8; self.width * self.height];
        for (i, r) in self.regions.iter().enumerate() {
            if !(ALPHA_MIN..=ALPHA_MAX).contains(&r.alpha) {
                return Err(Error::Spec(format!(
                    "region {i}: alpha {} outside [{ALPHA_MIN}, {ALPHA_MAX}]",
                    r.alpha
                )));
            }
            if r.width == 0
                || r.height == 0
                || r.x + r.width > self.width
                || r.y + r.height > self.height
            {
                return Err(Error::Spec(format!("region {i} is empty or leaves the raster")));
            }
            for y in r.y..r.y + r.height {
                for c in &mut cover[y * self.width + r.x..y * self.width + r.x + r.width] {
                    if *c != 0 {
                        return Err(Error::Spec(format!("region {i} overlaps another region")));
                    }
                    *c = 1;
                }
            }
        }
        if let Some(i) = cover.iter().position(|&c| c == 0) {
            return Err(Error::Spec(format!(
                "regions leave pixel ({}, {}) uncovered",
                i % self.width,
                i / self.width
            )));
        }
        Ok(())
    }
}

/// Draws a raster whose pixels in each region are i.i.d. unit-mean G_I^0
/// draws at that region's roughness. Region `i` uses `stream.split(i)` and
/// fills its rectangle in row-major order.
pub fn generate_mosaic(stream: &RngStream, spec: &MosaicSpec) -> Result<Raster> {
    spec.validate()?;
    let mut pixels = vec![0.0; spec.width * spec.height];
    for (i, r) in spec.regions.iter().enumerate() {
        let p = Gi0Params::unit_mean(r.alpha, spec.looks)?;
        let mut child = stream.split(i as u64);
        let draws = sample(&mut child, &p, r.width * r.height)?.into_values();
        for (dy, row) in draws.chunks(r.width).enumerate() {
            let start = (r.y + dy) * spec.width + r.x;
            pixels[start..start + r.width].copy_from_slice(row);
        }
    }
    Raster::new(spec.width, spec.height, pixels)
}

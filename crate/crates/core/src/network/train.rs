//! Mini-batch Adam training on (log-moment, roughness) pairs, for both the
//! sample-set estimator and the image (per-pixel) estimator.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use super::{model_checksum, ActivationCache, AdamConfig, AdamState, Gradients, MlpModel, ModelMeta};
use crate::error::{Error, Result};
use crate::features::{log_moments, pooled_moment_tensor, MomentVector, PaddingPolicy};
use crate::gi0::{generate_dataset_with, sample, Gi0Params, ALPHA_MAX, ALPHA_MIN};
use crate::numerics::RngStream;

/// Training rows grouped into items; one item is a sample set (group = 1)
/// or a whole raster (group = w·h pixels sharing one target).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    group: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, group: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 || group == 0 {
            return Err(Error::param("training rows need a positive width and group size"));
        }
        if targets.is_empty() || targets.len() % group != 0 || inputs.len() != targets.len() * dim {
            return Err(Error::param("training inputs and targets have inconsistent lengths"));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::domain("training data has non-finite values"));
        }
        Ok(Self {
            dim,
            group,
            inputs,
            targets,
        })
    }

    pub fn from_pairs(pairs: &[(MomentVector, f64)]) -> Result<Self> {
        let dim = pairs.first().map(|(m, _)| m.order()).unwrap_or(0);
        if pairs.iter().any(|(m, _)| m.order() != dim) {
            return Err(Error::param("moment vectors of mixed order"));
        }
        let inputs = pairs.iter().flat_map(|(m, _)| m.as_slice().iter().copied()).collect();
        let targets = pairs.iter().map(|(_, a)| *a).collect();
        Self::new(dim, 1, inputs, targets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> usize {
        self.targets.len() / self.group
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.inputs[i * self.dim..(i + 1) * self.dim], self.targets[i])
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Mean squared error of the constant predictor equal to the target mean.
    pub fn mean_predictor_mse(&self) -> f64 {
        let n = self.targets.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / n;
        self.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n
    }

    pub fn mse(&self, model: &MlpModel) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.rows() {
            let (x, y) = self.row(i);
            total += (model.predict(x)? - y).powi(2);
        }
        Ok(total / self.rows() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Items (sample sets or rasters) per Adam step.
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean squared error over each epoch's mini-batches (pre-update).
    pub epoch_mse: Vec<f64>,
    /// Wall-clock seconds since training started, at the end of each epoch.
    pub epoch_seconds: Vec<f64>,
    pub epochs: usize,
    pub seconds: f64,
    /// CRC-32 of the serialized final model.
    pub checksum: u32,
}

#[derive(Serialize)]
struct ReportLine {
    epoch: usize,
    mse: f64,
    seconds: f64,
}

impl TrainReport {
    pub fn final_mse(&self) -> f64 {
        self.epoch_mse.last().copied().unwrap_or(f64::NAN)
    }

    /// One `{"epoch":..,"mse":..,"seconds":..}` object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (i, (mse, secs)) in self.epoch_mse.iter().zip(&self.epoch_seconds).enumerate() {
            let line = ReportLine {
                epoch: i + 1,
                mse: *mse,
                seconds: *secs,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }
}

/// Trains a freshly initialized model of `layer_sizes` on `set`.
///
/// `stream.split(0)` initializes the weights and `stream.split(1)` drives the
/// per-epoch shuffles, so equal seeds give bit-identical models.
pub fn train_on_set(
    stream: &RngStream,
    set: &TrainingSet,
    layer_sizes: &[usize],
    meta: ModelMeta,
    options: &TrainOptions,
) -> Result<(MlpModel, TrainReport)> {
    if options.epochs == 0 || options.batch_size == 0 {
        return Err(Error::param("epochs and batch size must be positive"));
    }
    if layer_sizes.first() != Some(&set.dim()) {
        return Err(Error::param("model input width does not match the training rows"));
    }
    let start = Instant::now();
    let mut model = MlpModel::xavier(layer_sizes, meta, &mut stream.split(0))?;
    // start the head at the mean target so early steps do not saturate the tanh units
    let mean_target = set.targets().iter().sum::<f64>() / set.rows() as f64;
    if let Some(head) = model.layers_mut().last_mut() {
        head.bias.fill(mean_target);
    }
    let mut shuffler = stream.split(1);
    let mut adam = AdamState::new(&model, options.adam);
    let mut grads = Gradients::zeros_like(&model);
    let mut cache = ActivationCache::new(&model);
    let mut order: Vec<usize> = (0..set.items()).collect();
    let mut epoch_mse = Vec::with_capacity(options.epochs);
    let mut epoch_seconds = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(options.batch_size).enumerate() {
            grads.reset();
            let scale = 1.0 / (batch.len() * set.group) as f64;
            let mut batch_loss = 0.0;
            for &item in batch {
                for r in item * set.group..(item + 1) * set.group {
                    let (x, y) = set.row(r);
                    batch_loss += model.accumulate(x, y, scale, &mut grads, &mut cache);
                }
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch: epoch + 1,
                    batch: b + 1,
                    reason: format!("non-finite loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            adam.step(&mut model, &grads);
        }
        epoch_mse.push(epoch_loss / set.rows() as f64);
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }

    let report = TrainReport {
        epochs: options.epochs,
        seconds: start.elapsed().as_secs_f64(),
        checksum: model_checksum(&model),
        epoch_mse,
        epoch_seconds,
    };
    Ok((model, report))
}

/// Trains the `[N_m, 8, 4, 1]` sample-set estimator on a prepared dataset.
pub fn train_sample_estimator(
    stream: &RngStream,
    set: &TrainingSet,
    looks: u32,
    options: &TrainOptions,
) -> Result<(MlpModel, TrainReport)> {
    let (lo, hi) = target_bounds(set.targets())?;
    let mut meta = ModelMeta::new(set.dim(), looks);
    meta.alpha_min = lo;
    meta.alpha_max = hi;
    meta.seed = stream.seed();
    train_on_set(stream, set, &MlpModel::default_architecture(set.dim()), meta, options)
}

fn target_bounds(targets: &[f64]) -> Result<(f64, f64)> {
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < ALPHA_MIN || hi > ALPHA_MAX {
        return Err(Error::domain(format!(
            "training targets span [{lo}, {hi}], outside [{ALPHA_MIN}, {ALPHA_MAX}]"
        )));
    }
    Ok((lo, hi))
}

/// Log-moment vectors of a synthetic sample dataset (sets are reduced to
/// moments as they are drawn, so raw samples are never held all at once).
pub fn moment_training_set(
    stream: &mut RngStream,
    alphas: &[f64],
    sizes: &[usize],
    repeats: usize,
    looks: u32,
    moments: usize,
) -> Result<TrainingSet> {
    let pairs = generate_dataset_with(stream, alphas, sizes, repeats, looks, |set| {
        let alpha = set.truth.expect("generated sets carry their law").alpha;
        Ok((log_moments(set.values(), moments)?, alpha))
    })?;
    TrainingSet::from_pairs(&pairs)
}

/// The grid {−15, −13.5, …, −1.5}.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..10).map(|i| -15.0 + 1.5 * i as f64).collect()
}

/// Configuration of sample-set training; defaults follow the reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrainConfig {
    pub alphas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub looks: u32,
    pub moments: usize,
    pub options: TrainOptions,
}

impl Default for SampleTrainConfig {
    fn default() -> Self {
        Self {
            alphas: default_alpha_grid(),
            sizes: vec![100, 1000, 10000],
            repeats: 1000,
            looks: 1,
            moments: 2,
            options: TrainOptions::default(),
        }
    }
}

impl SampleTrainConfig {
    /// Draws the dataset from `stream.split(0)` and trains from `stream.split(1)`.
    pub fn run(&self, stream: &RngStream) -> Result<(MlpModel, TrainReport, TrainingSet)> {
        let set = moment_training_set(
            &mut stream.split(0),
            &self.alphas,
            &self.sizes,
            self.repeats,
            self.looks,
            self.moments,
        )?;
        let (mut model, mut report) =
            train_sample_estimator(&stream.split(1), &set, self.looks, &self.options)?;
        model.meta_mut().seed = stream.seed();
        report.checksum = model_checksum(&model);
        Ok((model, report, set))
    }
}

/// Configuration of image-mode training.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTrainConfig {
    pub alphas: Vec<f64>,
    pub kernels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub repeats: usize,
    pub looks: u32,
    pub moments: usize,
    pub options: TrainOptions,
}

impl Default for MapTrainConfig {
    fn default() -> Self {
        Self {
            alphas: default_alpha_grid(),
            kernels: vec![2, 5, 8, 11],
            width: 10,
            height: 10,
            repeats: 1000,
            looks: 1,
            moments: 2,
            options: TrainOptions::default(),
        }
    }
}

/// Trains the per-pixel estimator on single-law rasters.
///
/// Raster `i` of the (α, k, repeat) grid is drawn from `stream.split(0).split(i)`,
/// padded with fresh draws of its own law, and reduced to its pooled moment
/// tensor for kernel k; every pixel's target is α. Batches hold whole rasters.
pub fn train_map_estimator(
    stream: &RngStream,
    config: &MapTrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    if config.alphas.is_empty() || config.kernels.is_empty() || config.repeats == 0 {
        return Err(Error::param("alpha grid, kernel set and repeats must be nonempty"));
    }
    if config.width == 0 || config.height == 0 || config.moments == 0 {
        return Err(Error::param("raster size and moment order must be positive"));
    }
    if config.kernels.contains(&0) {
        return Err(Error::param("kernel sizes must be positive"));
    }
    let mut cells = Vec::new();
    for &alpha in &config.alphas {
        let p = Gi0Params::unit_mean(alpha, config.looks)?;
        p.check_generation_range()?;
        for &k in &config.kernels {
            cells.extend((0..config.repeats).map(|_| (p, k)));
        }
    }
    let data_root = stream.split(0);
    let pixels = config.width * config.height;
    let tubes = cells
        .par_iter()
        .enumerate()
        .map(|(i, (p, k))| {
            let mut child = data_root.split(i as u64);
            let values = sample(&mut child, p, pixels)?.into_values();
            let raster = crate::gi0::Raster::new(config.width, config.height, values)?;
            let pad = PaddingPolicy::SyntheticSamples {
                params: *p,
                seed: child.next_u64(),
            };
            let tensor = pooled_moment_tensor(&raster, config.moments, *k, &pad)?;
            let mut rows = vec![0.0; pixels * config.moments];
            for (j, row) in rows.chunks_mut(config.moments).enumerate() {
                tensor.tube_into(j % config.width, j / config.width, row);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = tubes.concat();
    let targets = cells
        .iter()
        .flat_map(|(p, _)| std::iter::repeat_n(p.alpha, pixels))
        .collect();
    let set = TrainingSet::new(config.moments, pixels, inputs, targets)?;

    let (lo, hi) = target_bounds(set.targets())?;
    let mut meta = ModelMeta::new(config.moments, config.looks);
    meta.alpha_min = lo;
    meta.alpha_max = hi;
    meta.kernels = config.kernels.clone();
    meta.seed = stream.seed();
    meta.dims = Some((config.width, config.height));
    train_on_set(
        &stream.split(1),
        &set,
        &MlpModel::default_architecture(config.moments),
        meta,
        &config.options,
    )
}

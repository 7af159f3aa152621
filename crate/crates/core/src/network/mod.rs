//! Tiny fully connected regressor mapping log-moment vectors to roughness.
//!
//! The same [`MlpModel`] serves both entry points: [`MlpModel::forward`] on a
//! single moment vector, and [`conv_forward`] which applies it to every
//! channel tube of a [`MomentTensor`], i.e. a stack of 1×1 convolutions.

mod adam;
mod model_file;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use model_file::{load_model, model_checksum, parse_model, save_model, serialize_model};
pub use train::{
    default_alpha_grid, moment_training_set, train_map_estimator, train_on_set, train_sample_estimator,
    MapTrainConfig, SampleTrainConfig, TrainOptions, TrainReport, TrainingSet,
};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{MomentTensor, MomentVector};
use crate::gi0::Raster;
use crate::numerics::RngStream;

/// Per-pixel roughness estimates, stored like any other raster.
pub type RoughnessMap = Raster;

/// Hidden widths of the default architecture.
pub const HIDDEN_LAYERS: [usize; 2] = [8, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "id",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "id" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `act(W x + b)` with W stored row-major (`rows = fan_out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(cols: usize, rows: usize, activation: Activation) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            activation,
        }
    }

    #[inline]
    fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let z = row.iter().zip(input).fold(self.bias[r], |acc, (w, x)| acc + w * x);
            *o = self.activation.apply(z);
        }
    }
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub moments: usize,
    pub looks: u32,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Kernel sizes seen in image-mode training; empty for sample-mode models.
    pub kernels: Vec<usize>,
    pub seed: u64,
    /// Training raster size for image-mode models.
    pub dims: Option<(usize, usize)>,
}

impl ModelMeta {
    pub fn new(moments: usize, looks: u32) -> Self {
        Self {
            moments,
            looks,
            alpha_min: crate::gi0::ALPHA_MIN,
            alpha_max: crate::estimators::SUCCESS_MAX,
            kernels: Vec::new(),
            seed: 0,
            dims: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    meta: ModelMeta,
}

impl MlpModel {
    /// Validates layer shapes: consecutive layers chain, the head is a single
    /// unit, every parameter is finite and the input width matches the
    /// metadata moment order.
    pub fn from_layers(layers: Vec<Dense>, meta: ModelMeta) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::param("model needs at least one layer"));
        };
        if first.cols != meta.moments {
            return Err(Error::param(format!(
                "first layer takes {} inputs but metadata says {} moments",
                first.cols, meta.moments
            )));
        }
        for (q, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.rows * layer.cols || layer.bias.len() != layer.rows {
                return Err(Error::param(format!("layer {q} has inconsistent parameter shapes")));
            }
            if q > 0 && layers[q - 1].rows != layer.cols {
                return Err(Error::param(format!(
                    "layer {q} expects {} inputs, previous layer yields {}",
                    layer.cols,
                    layers[q - 1].rows
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::param(format!("layer {q} has non-finite parameters")));
            }
        }
        if layers.last().map(|l| l.rows) != Some(1) {
            return Err(Error::param("the output layer must have exactly one unit"));
        }
        Ok(Self { layers, meta })
    }

    /// All-zero parameters for the given sizes, tanh hidden layers and a linear head.
    pub fn zeros(layer_sizes: &[usize], meta: ModelMeta) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::param("need at least input and output sizes"));
        }
        let last = layer_sizes.len() - 2;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(q, w)| {
                let act = if q == last { Activation::Identity } else { Activation::Tanh };
                Dense::zeros(w[0], w[1], act)
            })
            .collect();
        Self::from_layers(layers, meta)
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(layer_sizes: &[usize], meta: ModelMeta, stream: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, meta)?;
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            for w in &mut layer.weights {
                *w = stream.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    /// Default `[N_m, 8, 4, 1]` architecture.
    pub fn default_architecture(moments: usize) -> Vec<usize> {
        let mut sizes = vec![moments];
        sizes.extend(HIDDEN_LAYERS);
        sizes.push(1);
        sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.rows));
        sizes
    }

    fn max_width(&self) -> usize {
        self.layers.iter().map(|l| l.rows).max().unwrap_or(1).max(self.input_dim())
    }

    /// Roughness prediction for one moment vector.
    pub fn forward(&self, input: &MomentVector) -> Result<f64> {
        self.predict(input.as_slice())
    }

    /// As [`forward`](Self::forward) on a raw slice.
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::param(format!(
                "model takes {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut scratch = Scratch::new(self.max_width());
        Ok(self.forward_with(input, &mut scratch))
    }

    #[inline]
    fn forward_with(&self, input: &[f64], scratch: &mut Scratch) -> f64 {
        let Scratch { a, b } = scratch;
        let mut width = input.len();
        a[..width].copy_from_slice(input);
        for layer in &self.layers {
            layer.apply_into(&a[..width], &mut b[..layer.rows]);
            width = layer.rows;
            std::mem::swap(a, b);
        }
        a[0]
    }

    /// Exact gradients of the batch-mean squared error.
    pub fn backward(&self, batch: &[(MomentVector, f64)]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut cache = ActivationCache::new(self);
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            if x.order() != self.input_dim() {
                return Err(Error::param(format!(
                    "model takes {} inputs, got {}",
                    self.input_dim(),
                    x.order()
                )));
            }
            self.accumulate(x.as_slice(), *y, scale, &mut grads, &mut cache);
        }
        Ok(grads)
    }

    /// Adds `scale * ∂(ŷ − y)²/∂θ` into `grads` and returns (ŷ − y)².
    pub(crate) fn accumulate(
        &self,
        input: &[f64],
        target: f64,
        scale: f64,
        grads: &mut Gradients,
        cache: &mut ActivationCache,
    ) -> f64 {
        let acts = &mut cache.acts;
        acts[0].copy_from_slice(input);
        for (q, layer) in self.layers.iter().enumerate() {
            let (prev, next) = acts.split_at_mut(q + 1);
            layer.apply_into(&prev[q], &mut next[0]);
        }
        let out = acts[self.layers.len()][0];
        let err = out - target;

        let delta = &mut cache.delta;
        let back = &mut cache.back;
        delta.clear();
        delta.push(2.0 * scale * err * self.layers.last().unwrap().activation.slope_from_output(out));
        for q in (0..self.layers.len()).rev() {
            let layer = &self.layers[q];
            let input = &acts[q];
            let g = &mut grads.layers[q];
            for r in 0..layer.rows {
                let d = delta[r];
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if q > 0 {
                let below = self.layers[q - 1].activation;
                back.clear();
                back.resize(layer.cols, 0.0);
                for r in 0..layer.rows {
                    let d = delta[r];
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += w * d;
                    }
                }
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= below.slope_from_output(*a);
                }
                std::mem::swap(delta, back);
            }
        }
        err * err
    }

    /// Flattened parameter view in layer order (weights then bias per layer).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if values.len() != total {
            return Err(Error::param(format!("expected {total} parameters, got {}", values.len())));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }
}

struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    fn new(width: usize) -> Self {
        Self {
            a: vec![0.0; width],
            b: vec![0.0; width],
        }
    }
}

/// Per-layer activations retained for backpropagation.
pub(crate) struct ActivationCache {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

impl ActivationCache {
    pub(crate) fn new(model: &MlpModel) -> Self {
        Self {
            acts: model.layer_sizes().into_iter().map(|n| vec![0.0; n]).collect(),
            delta: Vec::new(),
            back: Vec::new(),
        }
    }
}

/// Gradient (or any parameter-shaped buffer) per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub(crate) fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Applies the model to every channel tube of `tensor` (1×1 convolutions).
/// Pixel (x, y) of the result equals `model.predict(tube(x, y))` exactly.
pub fn conv_forward(model: &MlpModel, tensor: &MomentTensor) -> Result<RoughnessMap> {
    if tensor.channels() != model.input_dim() {
        return Err(Error::param(format!(
            "model takes {} channels, tensor has {}",
            model.input_dim(),
            tensor.channels()
        )));
    }
    let (w, h) = (tensor.width(), tensor.height());
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut scratch = Scratch::new(model.max_width());
        let mut tube = vec![0.0; tensor.channels()];
        for (x, o) in row.iter_mut().enumerate() {
            tensor.tube_into(x, y, &mut tube);
            *o = model.forward_with(&tube, &mut scratch);
        }
    });
    Raster::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(v: &[f64]) -> MomentVector {
        MomentVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(&[2, 8, 4, 1], ModelMeta::new(2, 1)).unwrap();
        assert_eq!(m.forward(&mv(&[3.0, -40.0])).unwrap(), 0.0);
    }

    #[test]
    fn output_bias_passes_through() {
        let mut m = MlpModel::zeros(&[2, 8, 4, 1], ModelMeta::new(2, 1)).unwrap();
        m.layers_mut()[1].weights[0] = 1.0;
        m.layers_mut()[2].weights[0] = 1.0;
        m.layers_mut()[2].bias[0] = -7.0;
        assert_eq!(m.forward(&mv(&[0.0, 0.0])).unwrap(), -7.0);
    }

    #[test]
    fn dimension_mismatch_is_parameter_error() {
        let m = MlpModel::zeros(&[2, 8, 4, 1], ModelMeta::new(2, 1)).unwrap();
        assert!(matches!(m.forward(&mv(&[1.0])), Err(Error::Parameter(_))));
        assert!(matches!(m.backward(&[(mv(&[1.0]), 0.0)]), Err(Error::Parameter(_))));
        assert!(m.backward(&[]).is_err());
    }

    #[test]
    fn from_layers_rejects_bad_shapes() {
        let good = MlpModel::zeros(&[2, 3, 1], ModelMeta::new(2, 1)).unwrap();
        let mut layers = good.layers().to_vec();
        layers[1].cols = 4;
        assert!(MlpModel::from_layers(layers, ModelMeta::new(2, 1)).is_err());
        let mut layers = good.layers().to_vec();
        layers[0].weights[0] = f64::NAN;
        assert!(MlpModel::from_layers(layers, ModelMeta::new(2, 1)).is_err());
        assert!(MlpModel::zeros(&[2, 3, 1], ModelMeta::new(3, 1)).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut s = RngStream::new(3);
        let m = MlpModel::xavier(&[2, 8, 4, 1], ModelMeta::new(2, 1), &mut s).unwrap();
        let x = mv(&[0.3, 1.2]);
        let y = m.forward(&x).unwrap();
        let g = m.backward(&[(x, y)]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_gradient() {
        let mut s = RngStream::new(4);
        let m = MlpModel::xavier(&[2, 8, 4, 1], ModelMeta::new(2, 1), &mut s).unwrap();
        let batch = vec![(mv(&[0.1, 0.5]), -3.0), (mv(&[-0.4, 2.0]), -9.0)];
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let a = m.backward(&batch).unwrap().flatten();
        let b = m.backward(&doubled).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn trained_outputs_stay_finite_for_bounded_inputs() {
        let mut s = RngStream::new(8);
        let m = MlpModel::xavier(&[4, 8, 4, 1], ModelMeta::new(4, 1), &mut s).unwrap();
        for i in 0..200 {
            let v: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 13) % 101) as f64 - 50.0).collect();
            assert!(m.predict(&v).unwrap().is_finite());
        }
    }

    #[test]
    fn conv_forward_on_single_tube_and_constant_tensor() {
        let mut s = RngStream::new(5);
        let m = MlpModel::xavier(&[2, 8, 4, 1], ModelMeta::new(2, 1), &mut s).unwrap();
        let t = MomentTensor::new(2, 1, 1, vec![0.2, 0.7]).unwrap();
        assert_eq!(
            conv_forward(&m, &t).unwrap().pixels()[0],
            m.predict(&[0.2, 0.7]).unwrap()
        );
        let mut data = vec![0.4; 12];
        data[6..].fill(1.1);
        let t = MomentTensor::new(2, 3, 2, data).unwrap();
        let map = conv_forward(&m, &t).unwrap();
        assert!(map.pixels().windows(2).all(|w| w[0] == w[1]));
        let wrong = MomentTensor::new(3, 1, 1, vec![0.0; 3]).unwrap();
        assert!(matches!(conv_forward(&m, &wrong), Err(Error::Parameter(_))));
    }
}

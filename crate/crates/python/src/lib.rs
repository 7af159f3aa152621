//! Python bindings: sampling, moments, the classical estimators, trained
//! networks and roughness maps.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use roughness::estimators::{self, EstimationOutcome, MleMode};
use roughness::features::{self, PaddingPolicy};
use roughness::gi0::{self, Gi0Params, Raster, SampleSet};
use roughness::network::{self, MlpModel, SampleTrainConfig, TrainOptions};
use roughness::numerics::{self, RngStream};
use roughness::{io, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NumericalAbort { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn sample_set(values: Vec<f64>) -> PyResult<SampleSet> {
    SampleSet::new(values, None).map_err(py_err)
}

fn outcome(o: EstimationOutcome) -> (Option<f64>, &'static str) {
    (o.alpha_hat, o.status.name())
}

fn raster(rows: Vec<Vec<f64>>) -> PyResult<Raster> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Raster::new(width, height, rows.concat()).map_err(py_err)
}

fn rows(r: &Raster) -> Vec<Vec<f64>> {
    (0..r.height()).map(|y| r.row(y).to_vec()).collect()
}

#[pyfunction]
fn ln_gamma(x: f64) -> PyResult<f64> {
    numerics::ln_gamma(x).map_err(py_err)
}

#[pyfunction]
fn digamma(x: f64) -> PyResult<f64> {
    numerics::digamma(x).map_err(py_err)
}

#[pyfunction]
fn trigamma(x: f64) -> PyResult<f64> {
    numerics::trigamma(x).map_err(py_err)
}

/// Log-density of G_I^0(alpha, gamma, looks) at z.
#[pyfunction]
fn log_density(z: f64, alpha: f64, gamma: f64, looks: u32) -> PyResult<f64> {
    let p = Gi0Params::new(alpha, gamma, looks).map_err(py_err)?;
    gi0::log_density(z, &p).map_err(py_err)
}

/// Draws n values; gamma defaults to the unit-mean value -alpha - 1.
#[pyfunction]
#[pyo3(signature = (alpha, n, looks = 1, seed = 0, gamma = None))]
fn sample(alpha: f64, n: usize, looks: u32, seed: u64, gamma: Option<f64>) -> PyResult<Vec<f64>> {
    let p = Gi0Params::new(alpha, gamma.unwrap_or(-alpha - 1.0), looks).map_err(py_err)?;
    gi0::sample(&mut RngStream::new(seed), &p, n)
        .map(SampleSet::into_values)
        .map_err(py_err)
}

/// Mosaic raster (list of rows) from the key-value layout text.
#[pyfunction]
#[pyo3(signature = (spec, seed = 0))]
fn generate_mosaic(spec: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let spec = io::parse_mosaic_spec(spec).map_err(py_err)?;
    let r = gi0::generate_mosaic(&RngStream::new(seed), &spec).map_err(py_err)?;
    Ok(rows(&r))
}

#[pyfunction]
fn log_moments(values: Vec<f64>, order: usize) -> PyResult<Vec<f64>> {
    features::log_moments(&values, order)
        .map(|m| m.into_vec())
        .map_err(py_err)
}

/// Returns (alpha_hat or None, status name).
#[pyfunction]
#[pyo3(signature = (values, looks = 1))]
fn estimate_lcum(values: Vec<f64>, looks: u32) -> PyResult<(Option<f64>, &'static str)> {
    Ok(outcome(estimators::estimate_lcum(&sample_set(values)?, looks)))
}

/// Returns (alpha_hat or None, status name); mode is "paper" or "robust".
#[pyfunction]
#[pyo3(signature = (values, looks = 1, mode = "robust"))]
fn estimate_mle(values: Vec<f64>, looks: u32, mode: &str) -> PyResult<(Option<f64>, &'static str)> {
    let mode: MleMode = mode.parse().map_err(py_err)?;
    Ok(outcome(estimators::estimate_mle(&sample_set(values)?, looks, mode)))
}

/// A trained roughness network.
#[pyclass]
struct Model {
    inner: MlpModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        network::load_model(path).map(|inner| Model { inner }).map_err(py_err)
    }

    /// Trains a sample-set estimator on the default α grid.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, moments = 2, looks = 1, repeats = 1000, epochs = 300))]
    fn train(seed: u64, moments: usize, looks: u32, repeats: usize, epochs: usize) -> PyResult<Self> {
        let config = SampleTrainConfig {
            moments,
            looks,
            repeats,
            options: TrainOptions {
                epochs,
                ..TrainOptions::default()
            },
            ..SampleTrainConfig::default()
        };
        let (inner, _, _) = config.run(&RngStream::new(seed)).map_err(py_err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        network::save_model(&self.inner, path).map_err(py_err)
    }

    fn to_text(&self) -> String {
        network::serialize_model(&self.inner)
    }

    #[getter]
    fn moments(&self) -> usize {
        self.inner.meta().moments
    }

    #[getter]
    fn looks(&self) -> u32 {
        self.inner.meta().looks
    }

    fn predict(&self, moments: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&moments).map_err(py_err)
    }

    /// Returns (alpha_hat or None, status name).
    fn estimate(&self, values: Vec<f64>) -> PyResult<(Option<f64>, &'static str)> {
        estimators::estimate_nn(&self.inner, &sample_set(values)?)
            .map(outcome)
            .map_err(py_err)
    }

    /// Per-pixel roughness over a raster given as a list of rows.
    #[pyo3(signature = (image, kernel, pad = "reflect"))]
    fn roughness_map(&self, image: Vec<Vec<f64>>, kernel: usize, pad: &str) -> PyResult<Vec<Vec<f64>>> {
        let pad = match pad {
            "reflect" => PaddingPolicy::Reflect,
            "replicate" => PaddingPolicy::Replicate,
            other => return Err(PyValueError::new_err(format!("unknown padding `{other}`"))),
        };
        let est = estimators::estimate_map(&self.inner, &raster(image)?, kernel, &pad).map_err(py_err)?;
        Ok(rows(&est.map))
    }
}

#[pymodule]
fn sar_roughness_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ln_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(digamma, m)?)?;
    m.add_function(wrap_pyfunction!(trigamma, m)?)?;
    m.add_function(wrap_pyfunction!(log_density, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mosaic, m)?)?;
    m.add_function(wrap_pyfunction!(log_moments, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_lcum, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mle, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}

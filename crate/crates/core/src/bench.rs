//! Monte Carlo comparison of roughness estimators: MSE over successful trials,
//! failure rates and mean time per estimate, for every (α, L, n) cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{estimate_lcum, estimate_mle, estimate_nn, EstimationOutcome, MleMode, Status};
use crate::gi0::{sample, Gi0Params, SampleSet, ALPHA_MAX, ALPHA_MIN};
use crate::network::MlpModel;
use crate::numerics::RngStream;

/// An estimator taking part in a benchmark.
#[derive(Debug, Clone)]
pub enum Estimator {
    Lcum,
    Mle(MleMode),
    /// Networks sharing one moment order, one model per number of looks.
    Nn { moments: usize, models: BTreeMap<u32, MlpModel> },
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Lcum => "lcum".into(),
            Estimator::Mle(MleMode::PaperFaithful) => "mle-paper".into(),
            Estimator::Mle(MleMode::Robust) => "mle-robust".into(),
            Estimator::Nn { moments, .. } => format!("nn{moments}"),
        }
    }

    /// Groups models by moment order into `nnN` estimators.
    pub fn networks(models: Vec<MlpModel>) -> Result<Vec<Estimator>> {
        let mut by_order: BTreeMap<usize, BTreeMap<u32, MlpModel>> = BTreeMap::new();
        for m in models {
            let meta = m.meta();
            let slot = by_order.entry(meta.moments).or_default();
            if slot.contains_key(&meta.looks) {
                return Err(Error::param(format!(
                    "two {}-moment models for L = {}",
                    meta.moments, meta.looks
                )));
            }
            slot.insert(meta.looks, m);
        }
        Ok(by_order
            .into_iter()
            .map(|(moments, models)| Estimator::Nn { moments, models })
            .collect())
    }

    fn run(&self, sample: &SampleSet, looks: u32) -> Result<EstimationOutcome> {
        match self {
            Estimator::Lcum => Ok(estimate_lcum(sample, looks)),
            Estimator::Mle(mode) => Ok(estimate_mle(sample, looks, *mode)),
            Estimator::Nn { models, .. } => {
                let model = models
                    .get(&looks)
                    .ok_or_else(|| Error::param(format!("no network for L = {looks}")))?;
                estimate_nn(model, sample)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub alphas: Vec<f64>,
    pub looks: Vec<u32>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            alphas: vec![-1.5, -7.0, -15.0],
            looks: vec![1, 3, 8],
            sizes: vec![9, 25, 49, 121, 1000],
            trials: 1000,
            seed: 0,
            estimators: vec![
                Estimator::Lcum,
                Estimator::Mle(MleMode::PaperFaithful),
            ],
        }
    }
}

/// One (α, L, n) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub alpha: f64,
    pub looks: u32,
    pub n: usize,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.alphas.is_empty() || self.looks.is_empty() || self.sizes.is_empty() {
            return Err(Error::param("alpha, looks and size grids must be nonempty"));
        }
        for &a in &self.alphas {
            if !(ALPHA_MIN..=ALPHA_MAX).contains(&a) {
                return Err(Error::param(format!("alpha {a} outside [{ALPHA_MIN}, {ALPHA_MAX}]")));
            }
        }
        if self.looks.contains(&0) || self.sizes.contains(&0) {
            return Err(Error::param("looks and sample sizes must be positive"));
        }
        for est in &self.estimators {
            if let Estimator::Nn { moments, models } = est {
                for l in &self.looks {
                    if !models.contains_key(l) {
                        return Err(Error::param(format!("nn{moments}: no model trained for L = {l}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Cells in α-major, then L, then n order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &alpha in &self.alphas {
            for &looks in &self.looks {
                for &n in &self.sizes {
                    cells.push(Cell { alpha, looks, n });
                }
            }
        }
        cells
    }

    /// The sample every estimator sees in trial `trial` of cell `cell`.
    pub fn trial_sample(&self, cell: usize, trial: usize) -> Result<SampleSet> {
        let c = self.cells()[cell];
        let p = Gi0Params::unit_mean(c.alpha, c.looks)?;
        let mut stream = RngStream::new(self.seed).split(cell as u64).split(trial as u64);
        sample(&mut stream, &p, c.n)
    }
}

/// Aggregated outcomes of one estimator on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub estimator: String,
    pub alpha: f64,
    pub looks: u32,
    pub n: usize,
    pub trials: usize,
    /// Outcome counts indexed like [`Status::ALL`].
    pub counts: [usize; 4],
    /// Mean squared error over successful trials; `None` when every trial failed.
    pub mse: Option<f64>,
    /// Mean wall-clock seconds per estimate.
    pub mean_seconds: f64,
}

impl CellResult {
    pub fn count(&self, status: Status) -> usize {
        self.counts[Status::ALL.iter().position(|s| *s == status).unwrap()]
    }

    pub fn successes(&self) -> usize {
        self.count(Status::Success)
    }

    /// Percentage of trials that did not succeed.
    pub fn failure_rate(&self) -> f64 {
        100.0 * (self.trials - self.successes()) as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResult {
    pub rows: Vec<CellResult>,
}

impl BenchResult {
    pub fn get(&self, estimator: &str, alpha: f64, looks: u32, n: usize) -> Option<&CellResult> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.alpha == alpha && r.looks == looks && r.n == n)
    }

    /// Failure rate pooled over all rows of `estimator` with the given looks.
    pub fn pooled_failure_rate(&self, estimator: &str, looks: u32) -> Option<f64> {
        let rows: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.estimator == estimator && r.looks == looks)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let trials: usize = rows.iter().map(|r| r.trials).sum();
        let ok: usize = rows.iter().map(|r| r.successes()).sum();
        Some(100.0 * (trials - ok) as f64 / trials as f64)
    }
}

struct Accumulator {
    counts: [usize; 4],
    sq_err: f64,
    seconds: f64,
}

/// Runs every trial of every cell. Trials of a cell share one sample across
/// estimators; cells run in parallel and results come back in cell order.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let cells = config.cells();
    let per_cell = cells
        .par_iter()
        .enumerate()
        .map(|(ci, cell)| {
            let mut acc: Vec<Accumulator> = config
                .estimators
                .iter()
                .map(|_| Accumulator {
                    counts: [0; 4],
                    sq_err: 0.0,
                    seconds: 0.0,
                })
                .collect();
            for t in 0..config.trials {
                let draw = config.trial_sample(ci, t)?;
                for (est, a) in config.estimators.iter().zip(acc.iter_mut()) {
                    let out = est.run(&draw, cell.looks)?;
                    let idx = Status::ALL.iter().position(|s| *s == out.status).unwrap();
                    a.counts[idx] += 1;
                    a.seconds += out.elapsed;
                    if let Some(v) = out.success_value() {
                        a.sq_err += (v - cell.alpha).powi(2);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (ei, est) in config.estimators.iter().enumerate() {
        let name = est.name();
        for (cell, acc) in cells.iter().zip(&per_cell) {
            let a = &acc[ei];
            let ok = a.counts[0];
            rows.push(CellResult {
                estimator: name.clone(),
                alpha: cell.alpha,
                looks: cell.looks,
                n: cell.n,
                trials: config.trials,
                counts: a.counts,
                mse: (ok > 0).then(|| a.sq_err / ok as f64),
                mean_seconds: a.seconds / config.trials as f64,
            });
        }
    }
    Ok(BenchResult { rows })
}

const KEY_HEADER: [&str; 4] = ["estimator", "alpha", "L", "n"];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn key_fields(r: &CellResult) -> Vec<String> {
    vec![r.estimator.clone(), r.alpha.to_string(), r.looks.to_string(), r.n.to_string()]
}

fn with_value<'a>(
    result: &'a BenchResult,
    f: impl Fn(&CellResult) -> String + 'a,
) -> impl Iterator<Item = Vec<String>> + 'a {
    result.rows.iter().map(move |r| {
        let mut k = key_fields(r);
        k.push(f(r));
        k
    })
}

/// Writes `mse.csv`, `failure_rates.csv`, `timing.csv` and `counts.csv` into `dir`.
pub fn export_tables(result: &BenchResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let value_header = [KEY_HEADER.as_slice(), &["value"]].concat();
    write_csv(
        &dir.join("mse.csv"),
        &value_header,
        with_value(result, |r| r.mse.map(|v| v.to_string()).unwrap_or_default()),
    )?;
    write_csv(
        &dir.join("failure_rates.csv"),
        &value_header,
        with_value(result, |r| r.failure_rate().to_string()),
    )?;
    write_csv(&dir.join("timing.csv"), &value_header, with_value(result, |r| r.mean_seconds.to_string()))?;
    let mut count_header: Vec<&str> = KEY_HEADER.to_vec();
    count_header.push("trials");
    count_header.extend(Status::ALL.iter().map(|s| s.name()));
    write_csv(
        &dir.join("counts.csv"),
        &count_header,
        result.rows.iter().map(|r| {
            let mut k = key_fields(r);
            k.push(r.trials.to_string());
            k.extend(r.counts.iter().map(|c| c.to_string()));
            k
        }),
    )
}

fn read_csv(path: &Path, width: usize) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != width {
            return Err(Error::format(format!("{}: expected {width} fields", path.display())));
        }
        out.push(rec.iter().map(String::from).collect());
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(format!("{}: invalid field `{s}`", path.display())))
}

/// Reads the tables written by [`export_tables`] back into a [`BenchResult`].
pub fn read_tables(dir: impl AsRef<Path>) -> Result<BenchResult> {
    let dir = dir.as_ref();
    let counts_path = dir.join("counts.csv");
    let mut rows = Vec::new();
    for rec in read_csv(&counts_path, 9)? {
        let p = &counts_path;
        let mut counts = [0usize; 4];
        for (c, s) in counts.iter_mut().zip(&rec[5..]) {
            *c = parse_field(p, s)?;
        }
        rows.push(CellResult {
            estimator: rec[0].clone(),
            alpha: parse_field(p, &rec[1])?,
            looks: parse_field(p, &rec[2])?,
            n: parse_field(p, &rec[3])?,
            trials: parse_field(p, &rec[4])?,
            counts,
            mse: None,
            mean_seconds: 0.0,
        });
    }
    let mse_path = dir.join("mse.csv");
    let mse = read_csv(&mse_path, 5)?;
    let timing_path = dir.join("timing.csv");
    let timing = read_csv(&timing_path, 5)?;
    let rates_path = dir.join("failure_rates.csv");
    let rates = read_csv(&rates_path, 5)?;
    if mse.len() != rows.len() || timing.len() != rows.len() || rates.len() != rows.len() {
        return Err(Error::format("bench tables have different row counts"));
    }
    for (i, row) in rows.iter_mut().enumerate() {
        for table in [&mse[i], &timing[i], &rates[i]] {
            if table[..4] != key_fields(row)[..] {
                return Err(Error::format(format!("bench tables disagree on row {}", i + 1)));
            }
        }
        row.mse = match mse[i][4].as_str() {
            "" => None,
            s => Some(parse_field(&mse_path, s)?),
        };
        row.mean_seconds = parse_field(&timing_path, &timing[i][4])?;
        let rate: f64 = parse_field(&rates_path, &rates[i][4])?;
        if rate != row.failure_rate() {
            return Err(Error::format(format!(
                "failure rate on row {} does not match counts",
                i + 1
            )));
        }
    }
    Ok(BenchResult { rows })
}

/// Plain-text table: one line per (estimator, cell).
pub fn summary_table(result: &BenchResult) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<11} {:>6} {:>3} {:>6} {:>12} {:>8} {:>10}",
        "estimator", "alpha", "L", "n", "mse", "fail%", "ms/est"
    )
    .unwrap();
    for r in &result.rows {
        let mse = r.mse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<11} {:>6} {:>3} {:>6} {:>12} {:>8.2} {:>10.4}",
            r.estimator,
            r.alpha,
            r.looks,
            r.n,
            mse,
            r.failure_rate(),
            r.mean_seconds * 1e3
        )
        .unwrap();
    }
    out
}

//! Command-line front end. Every command validates its flags and config
//! before doing any work; failures map to exit codes 2 (usage), 3 (data or
//! format) and 4 (numerical abort).

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{export_tables, run_bench, summary_table, BenchConfig, Estimator};
use crate::error::Error;
use crate::estimators::{
    estimate_lcum, estimate_map, estimate_mle, estimate_nn, likelihood_grid_argmax, MleMode,
};
use crate::features::PaddingPolicy;
use crate::gi0::{generate_mosaic, sample, Gi0Params, SampleSet};
use crate::io::{
    load_mosaic_spec, load_raster, load_samples, render_ppm, save_raster, save_samples, ConfigFile,
};
use crate::network::{
    load_model, save_model, train_map_estimator, MapTrainConfig, MlpModel, SampleTrainConfig,
    TrainOptions, TrainReport,
};
use crate::numerics::RngStream;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sar-roughness", version, about = "SAR roughness estimation with tiny networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic data.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Train a sample-set estimator.
    TrainSample(TrainArgs),
    /// Train a per-pixel map estimator on synthetic rasters.
    TrainMap(TrainArgs),
    /// Estimate roughness from a sample file.
    Estimate(EstimateArgs),
    /// Produce a roughness map from a raster.
    Map(MapArgs),
    /// Monte Carlo comparison of estimators.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Draw one sample set.
    Samples(GenSamplesArgs),
    /// Draw a piecewise-constant raster from a mosaic layout.
    Mosaic(GenMosaicArgs),
}

#[derive(Debug, Args)]
pub struct GenSamplesArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    /// Scale; defaults to the unit-mean value −α − 1.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub looks: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenMosaicArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of log-moments fed to the network.
    #[arg(long)]
    pub nm: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub looks: Option<u32>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// JSON-lines training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Nn,
    Mle,
    Lcum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Paper,
    Robust,
}

impl From<ModeArg> for MleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Paper => MleMode::PaperFaithful,
            ModeArg::Robust => MleMode::Robust,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Looks; defaults to the sample header, then 1. Network models carry their own.
    #[arg(long)]
    pub looks: Option<u32>,
    #[arg(long, value_enum, default_value_t = ModeArg::Robust)]
    pub mode: ModeArg,
    /// Also print the argmax of the tied likelihood on a 0.001-step grid.
    #[arg(long)]
    pub oracle_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PadArg {
    Reflect,
    Replicate,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kernel: usize,
    #[arg(long, value_enum, default_value_t = PadArg::Reflect)]
    pub pad: PadArg,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Grayscale preview clipped to the success band.
    #[arg(long)]
    pub ppm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of lcum, mle-paper, mle-robust, nn.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Network model files, one per (moments, looks) pair.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Directory for the CSV tables.
    #[arg(short, long)]
    pub output: PathBuf,
}

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn stage(self, stage: &str) -> Self {
        Self {
            code: self.code,
            message: format!("{stage}: {}", self.message),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parameter(_) => EXIT_USAGE,
            Error::NumericalAbort { .. } => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs a parsed command, writing its report lines to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CmdResult {
    match cli.command {
        Command::Gen(GenCommand::Samples(a)) => cmd_gen_samples(a, out),
        Command::Gen(GenCommand::Mosaic(a)) => cmd_gen_mosaic(a, out),
        Command::TrainSample(a) => cmd_train_sample(a, out),
        Command::TrainMap(a) => cmd_train_map(a, out),
        Command::Estimate(a) => cmd_estimate(a, out),
        Command::Map(a) => cmd_map(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Failure::from(Error::Io { path: "<stdout>".into(), source: e }))?
    };
}

fn cmd_gen_samples(a: GenSamplesArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let gamma = match a.gamma {
        Some(g) => g,
        None => -a.alpha - 1.0,
    };
    if a.n == 0 {
        return Err(Failure::usage("--n must be positive"));
    }
    let p = Gi0Params::new(a.alpha, gamma, a.looks)?;
    p.check_generation_range()?;
    let set = sample(&mut RngStream::new(a.seed), &p, a.n)?;
    save_samples(&set, &a.output)?;
    say!(out, "wrote {} samples to {} seed={}", set.len(), a.output.display(), a.seed);
    Ok(())
}

fn cmd_gen_mosaic(a: GenMosaicArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let spec = load_mosaic_spec(&a.spec)?;
    let raster = generate_mosaic(&RngStream::new(a.seed), &spec)?;
    save_raster(&raster, &a.output)?;
    say!(
        out,
        "wrote {}x{} raster ({} regions) to {} seed={}",
        raster.width(),
        raster.height(),
        spec.regions.len(),
        a.output.display(),
        a.seed
    );
    Ok(())
}

const TRAIN_SAMPLE_KEYS: &[&str] = &[
    "alphas", "sizes", "repeats", "epochs", "batch", "lr", "looks", "seed", "nm",
];
const TRAIN_MAP_KEYS: &[&str] = &[
    "alphas", "kernels", "width", "height", "repeats", "epochs", "batch", "lr", "looks", "seed", "nm",
];

/// Settings shared by both training commands after merging config and flags.
struct TrainSettings {
    cfg: ConfigFile,
    seed: u64,
}

fn train_settings(a: &TrainArgs, keys: &[&str]) -> std::result::Result<TrainSettings, Failure> {
    let mut cfg = match &a.config {
        Some(p) => ConfigFile::load(p, keys)?,
        None => ConfigFile::default(),
    };
    let overrides = [
        ("nm", a.nm.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("repeats", a.repeats.map(|v| v.to_string())),
        ("looks", a.looks.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, v);
        }
    }
    let seed = cfg.get("seed")?.unwrap_or(0);
    Ok(TrainSettings { cfg, seed })
}

fn train_options(cfg: &ConfigFile) -> std::result::Result<TrainOptions, Failure> {
    let mut o = TrainOptions::default();
    if let Some(v) = cfg.get("epochs")? {
        o.epochs = v;
    }
    if let Some(v) = cfg.get("batch")? {
        o.batch_size = v;
    }
    if let Some(v) = cfg.get::<f64>("lr")? {
        o.adam.lr = v;
    }
    if o.epochs == 0 || o.batch_size == 0 {
        return Err(Failure::usage("epochs and batch must be positive"));
    }
    if !(o.adam.lr.is_finite() && o.adam.lr > 0.0) {
        return Err(Failure::usage("lr must be a positive number"));
    }
    Ok(o)
}

fn positive(name: &str, v: usize) -> std::result::Result<usize, Failure> {
    if v == 0 {
        Err(Failure::usage(format!("{name} must be positive")))
    } else {
        Ok(v)
    }
}

fn check_alphas(alphas: &[f64]) -> CmdResult {
    for &a in alphas {
        Gi0Params::unit_mean(a, 1)
            .and_then(|p| p.check_generation_range())
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn finish_training(
    model: &MlpModel,
    report: &TrainReport,
    a: &TrainArgs,
    out: &mut dyn std::io::Write,
) -> CmdResult {
    save_model(model, &a.output).map_err(|e| Failure::from(e).stage("output"))?;
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_json_lines())
            .map_err(|e| Failure::from(Error::Io { path: path.clone(), source: e }).stage("output"))?;
    }
    say!(
        out,
        "model={} epochs={} final_mse={:.6} seconds={:.3} crc32={:08x}",
        a.output.display(),
        report.epochs,
        report.final_mse(),
        report.seconds,
        report.checksum
    );
    Ok(())
}

fn cmd_train_sample(a: TrainArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let s = train_settings(&a, TRAIN_SAMPLE_KEYS)?;
    let mut config = SampleTrainConfig {
        options: train_options(&s.cfg)?,
        ..SampleTrainConfig::default()
    };
    if let Some(v) = s.cfg.get_list("alphas")? {
        config.alphas = v;
    }
    if let Some(v) = s.cfg.get_list("sizes")? {
        config.sizes = v;
    }
    if let Some(v) = s.cfg.get("repeats")? {
        config.repeats = positive("repeats", v)?;
    }
    if let Some(v) = s.cfg.get("looks")? {
        config.looks = v;
    }
    if let Some(v) = s.cfg.get("nm")? {
        config.moments = positive("nm", v)?;
    }
    check_alphas(&config.alphas)?;
    if config.looks == 0 || config.sizes.contains(&0) {
        return Err(Failure::usage("looks and sizes must be positive"));
    }
    let (model, report, _) = config.run(&RngStream::new(s.seed))?;
    finish_training(&model, &report, &a, out)
}

fn cmd_train_map(a: TrainArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let s = train_settings(&a, TRAIN_MAP_KEYS)?;
    let mut config = MapTrainConfig {
        options: train_options(&s.cfg)?,
        ..MapTrainConfig::default()
    };
    if let Some(v) = s.cfg.get_list("alphas")? {
        config.alphas = v;
    }
    if let Some(v) = s.cfg.get_list::<usize>("kernels")? {
        config.kernels = v;
    }
    if let Some(v) = s.cfg.get("width")? {
        config.width = positive("width", v)?;
    }
    if let Some(v) = s.cfg.get("height")? {
        config.height = positive("height", v)?;
    }
    if let Some(v) = s.cfg.get("repeats")? {
        config.repeats = positive("repeats", v)?;
    }
    if let Some(v) = s.cfg.get("looks")? {
        config.looks = v;
    }
    if let Some(v) = s.cfg.get("nm")? {
        config.moments = positive("nm", v)?;
    }
    check_alphas(&config.alphas)?;
    if config.looks == 0 || config.kernels.contains(&0) {
        return Err(Failure::usage("looks and kernels must be positive"));
    }
    let (model, report) = train_map_estimator(&RngStream::new(s.seed), &config)?;
    finish_training(&model, &report, &a, out)
}

fn header_looks(set: &SampleSet) -> Option<u32> {
    set.truth.map(|p| p.looks)
}

fn cmd_estimate(a: EstimateArgs, out: &mut dyn std::io::Write) -> CmdResult {
    if a.estimator == EstimatorArg::Nn && a.model.is_none() {
        return Err(Failure::usage("--model is required for the nn estimator"));
    }
    if a.looks == Some(0) {
        return Err(Failure::usage("--looks must be positive"));
    }
    let model = a
        .model
        .as_ref()
        .filter(|_| a.estimator == EstimatorArg::Nn)
        .map(load_model)
        .transpose()
        .map_err(|e| Failure::from(e).stage("model"))?;
    let set = load_samples(&a.input).map_err(|e| Failure::from(e).stage("input"))?;
    let looks = a.looks.or_else(|| header_looks(&set)).unwrap_or(1);
    let outcome = match a.estimator {
        EstimatorArg::Nn => estimate_nn(model.as_ref().expect("checked above"), &set)?,
        EstimatorArg::Mle => estimate_mle(&set, looks, a.mode.into()),
        EstimatorArg::Lcum => estimate_lcum(&set, looks),
    };
    let value = outcome
        .alpha_hat
        .map(|v| v.to_string())
        .unwrap_or_else(|| "nan".into());
    say!(
        out,
        "alpha_hat={value} status={} ms={:.3}",
        outcome.status,
        outcome.elapsed * 1e3
    );
    if a.oracle_grid {
        say!(out, "grid_alpha={}", likelihood_grid_argmax(&set, looks, 1e-3));
    }
    Ok(())
}

fn cmd_map(a: MapArgs, out: &mut dyn std::io::Write) -> CmdResult {
    if a.kernel == 0 {
        return Err(Failure::usage("--kernel must be positive"));
    }
    let io_start = Instant::now();
    let model = load_model(&a.model).map_err(|e| Failure::from(e).stage("model"))?;
    let raster = load_raster(&a.input).map_err(|e| Failure::from(e).stage("input"))?;
    let mut io_seconds = io_start.elapsed().as_secs_f64();
    let meta = model.meta();
    if meta.kernels.is_empty() {
        eprintln!("warning: model was trained on sample sets, not on pooled windows");
    } else if !meta.kernels.contains(&a.kernel) {
        eprintln!(
            "warning: kernel {} was not among the training kernels {:?}",
            a.kernel, meta.kernels
        );
    }
    let pad = match a.pad {
        PadArg::Reflect => PaddingPolicy::Reflect,
        PadArg::Replicate => PaddingPolicy::Replicate,
    };
    let est = estimate_map(&model, &raster, a.kernel, &pad).map_err(|e| Failure::from(e).stage("map"))?;
    if est.clamped_zeros > 0 {
        eprintln!("warning: {} zero pixels clamped before taking logs", est.clamped_zeros);
    }
    let write_start = Instant::now();
    save_raster(&est.map, &a.output).map_err(|e| Failure::from(e).stage("output"))?;
    if let Some(p) = &a.ppm {
        std::fs::write(p, render_ppm(&est.map))
            .map_err(|e| Failure::from(Error::Io { path: p.clone(), source: e }).stage("output"))?;
    }
    io_seconds += write_start.elapsed().as_secs_f64();
    say!(
        out,
        "map={} size={}x{} kernel={} moments={:.3}s inference={:.3}s io={:.3}s",
        a.output.display(),
        est.map.width(),
        est.map.height(),
        a.kernel,
        est.moments_seconds,
        est.inference_seconds,
        io_seconds
    );
    Ok(())
}

const BENCH_KEYS: &[&str] = &["alphas", "looks", "sizes", "trials", "seed", "estimators"];

fn parse_estimator_names(
    names: &[String],
    models: &[PathBuf],
) -> std::result::Result<Vec<Estimator>, Failure> {
    let mut out = Vec::new();
    let mut want_nn = false;
    for name in names {
        match name.trim() {
            "lcum" => out.push(Estimator::Lcum),
            "mle" | "mle-paper" => out.push(Estimator::Mle(MleMode::PaperFaithful)),
            "mle-robust" => out.push(Estimator::Mle(MleMode::Robust)),
            "nn" => want_nn = true,
            other => {
                return Err(Failure::usage(format!(
                    "unknown estimator `{other}` (lcum, mle-paper, mle-robust, nn)"
                )))
            }
        }
    }
    if want_nn {
        if models.is_empty() {
            return Err(Failure::usage("estimator nn needs at least one --model"));
        }
        let loaded = models
            .iter()
            .map(|p| load_model(p).map_err(|e| Failure::from(e).stage("model")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        out.extend(Estimator::networks(loaded)?);
    }
    Ok(out)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let cfg = match &a.config {
        Some(p) => ConfigFile::load(p, BENCH_KEYS)?,
        None => ConfigFile::default(),
    };
    let mut config = BenchConfig::default();
    if let Some(v) = cfg.get_list("alphas")? {
        config.alphas = v;
    }
    if let Some(v) = cfg.get_list("looks")? {
        config.looks = v;
    }
    if let Some(v) = cfg.get_list("sizes")? {
        config.sizes = v;
    }
    if let Some(v) = cfg.get("trials")? {
        config.trials = v;
    }
    if let Some(v) = cfg.get("seed")? {
        config.seed = v;
    }
    if let Some(v) = a.trials {
        config.trials = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    let names: Vec<String> = match (&a.estimators, cfg.get_list::<String>("estimators")?) {
        (Some(v), _) => v.clone(),
        (None, Some(v)) => v,
        (None, None) if a.model.is_empty() => vec!["lcum".into(), "mle-paper".into()],
        (None, None) => vec!["lcum".into(), "mle-paper".into(), "nn".into()],
    };
    config.estimators = parse_estimator_names(&names, &a.model)?;
    config.validate()?;
    let result = run_bench(&config)?;
    export_tables(&result, &a.output).map_err(|e| Failure::from(e).stage("output"))?;
    write!(out, "{}", summary_table(&result))
        .map_err(|e| Failure::from(Error::Io { path: "<stdout>".into(), source: e }))?;
    say!(out, "tables written to {}", a.output.display());
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}


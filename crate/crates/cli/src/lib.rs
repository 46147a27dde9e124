//! Command-line front end: train a reference MLP, prune one of its layers
//! with FeTa or a baseline, report generalization bounds, and time the
//! pruner on synthetic layer data.
//!
//! Every command writes CSV (header first) to stdout or to `--csv PATH`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use feta::baselines::{
    compression_ratio, hard_threshold, rank_for_compression_ratio, threshold_for_sparsity,
    truncated_svd_compress,
};
use feta::bounds::{self, BoundValue, ManifoldParams};
use feta::data::{lift_linear, load_idx, synth_blobs, toy_gaussian, ToySpec};
use feta::network::train_sgd;
use feta::objective::layer_mse;
use feta::prune::{entry_sparsity, lambda_for_sparsity};
use feta::{
    feta_prune, spectral_norm, Dataset, Error, LayerData, Network, PruneConfig,
    PruneResult, Rectifier, Regularizer, RegularizerKind, Rng, SmoothReluParams, SolverParams,
    TrainParams,
};

pub const PRUNE_HEADER: [&str; 10] = [
    "method", "layer", "lambda", "sparsity", "rank", "cr", "layer_mse", "acc_before", "acc_after",
    "seconds",
];
pub const TRAIN_HEADER: [&str; 3] = ["train_acc", "test_acc", "seconds"];
pub const EVAL_HEADER: [&str; 2] = ["train_acc", "test_acc"];
pub const BOUNDS_HEADER: [&str; 9] = [
    "kind", "layer", "score", "gamma", "c_squared", "penalty", "a_const", "b_const", "bound",
];
pub const BENCH_HEADER: [&str; 6] = ["d1", "d2", "n", "reps", "median_seconds", "slope"];

/// Sparsity tolerance and evaluation budget of `prune --sparsity-target`.
pub const TARGET_TOLERANCE: f64 = 0.01;
pub const TARGET_MAX_EVALS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "feta", version, about = "Layer pruning via difference-of-convex optimization")]
pub struct Cli {
    /// Write CSV here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Suppress the human-readable summary on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an MLP. CSV: train_acc,test_acc,seconds
    Train(TrainArgs),
    /// Report train and test accuracy of a model. CSV: train_acc,test_acc
    Eval(EvalArgs),
    /// Prune one hidden layer with FeTa.
    /// CSV: method,layer,lambda,sparsity,rank,cr,layer_mse,acc_before,acc_after,seconds
    Prune(PruneArgs),
    /// Prune one hidden layer by hard thresholding or truncated SVD. Same CSV as prune.
    Baseline(BaselineArgs),
    /// Generalization-error bounds for a pruned model.
    /// CSV: kind,layer,score,gamma,c_squared,penalty,a_const,b_const,bound.
    /// c_squared is measured on the test set, not certified.
    Bounds(BoundsArgs),
    /// Time FeTa on Gaussian layer data. CSV: d1,d2,n,reps,median_seconds,slope
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataSource {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "blobs")]
    pub data: DataSource,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 300)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Lift the blobs linearly into this many input dimensions (0 keeps `--dim`).
    #[arg(long, default_value_t = 0)]
    pub ambient_dim: usize,
    /// Seed for blob generation and the train/test split.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// IDX image file (with --data idx).
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Separate IDX test set; without it the data is split.
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Keep only the first N shuffled training samples (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub train_limit: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "128,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    L1,
    Nuclear,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Outer DCA iterations K.
    #[arg(long, default_value_t = 10)]
    pub outer_iters: usize,
    /// Inner solver epochs S.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Inner steps per epoch T (default: one pass over the samples).
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    /// Step used when --eta fails in the first epoch; 0 disables.
    #[arg(long, default_value_t = 1e-4)]
    pub fallback_eta: f64,
    #[arg(long, default_value_t = 0.95)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub minibatch: usize,
    /// Softplus sharpness.
    #[arg(long, default_value_t = SmoothReluParams::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long, value_enum, default_value = "l1")]
    pub reg: RegArg,
    /// One row per value.
    #[arg(long, value_delimiter = ',', conflicts_with = "sparsity_target")]
    pub lambda: Vec<f64>,
    /// Search λ until the sparsity is within 1% of this.
    #[arg(long)]
    pub sparsity_target: Option<f64>,
    /// Prune on at most this many captured samples (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Threshold,
    Svd,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub layer: usize,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Target fraction of zero weights (threshold).
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Kept rank (svd).
    #[arg(long, conflicts_with = "cr")]
    pub rank: Option<usize>,
    /// Compression ratio; picks the largest rank within it (svd).
    #[arg(long)]
    pub cr: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pruned_model: PathBuf,
    /// Intrinsic data dimension.
    #[arg(long, default_value_t = 20.0)]
    pub k: f64,
    /// Manifold regularity constant.
    #[arg(long = "cm", default_value_t = 1.0)]
    pub cm: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Generalization error of the unpruned model, scaled by the ratio prediction.
    #[arg(long, default_value_t = 0.01)]
    pub base_ge: f64,
    /// Exit 1 when no bound is finite.
    #[arg(long)]
    pub require_finite: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    pub d1_list: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub d2: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub outer_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eta: f64,
    #[arg(long, default_value_t = 64)]
    pub minibatch: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("writing CSV: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first) and runs the command, writing CSV to
/// `out` unless `--csv` is given.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
    run(cli, out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    if let Some(path) = &cli.csv {
        check_writable(path)?;
    }
    let mut stderr = std::io::stderr();
    let mut sink = std::io::sink();
    let diag: &mut dyn Write = if cli.quiet { &mut sink } else { &mut stderr };
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        match &cli.command {
            Command::Train(a) => cmd_train(a, &mut w, diag)?,
            Command::Eval(a) => cmd_eval(a, &mut w)?,
            Command::Prune(a) => cmd_prune(a, &mut w)?,
            Command::Baseline(a) => cmd_baseline(a, &mut w)?,
            Command::Bounds(a) => cmd_bounds(a, &mut w, diag)?,
            Command::Bench(a) => cmd_bench(a, &mut w, diag)?,
        }
        w.flush()?;
    }
    match &cli.csv {
        Some(path) => File::create(path)?.write_all(&buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

type CsvOut<'a> = csv::Writer<&'a mut Vec<u8>>;

fn check_readable(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn check_writable(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(usage(format!("output directory does not exist: {}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl DataArgs {
    fn validate(&self) -> CliResult<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(usage(format!("--test-fraction {} outside [0, 1)", self.test_fraction)));
        }
        if self.data == DataSource::Idx {
            let (Some(images), Some(labels)) = (&self.images, &self.labels) else {
                return Err(usage("--data idx needs --images and --labels"));
            };
            check_readable(images)?;
            check_readable(labels)?;
            match (&self.test_images, &self.test_labels) {
                (Some(ti), Some(tl)) => {
                    check_readable(ti)?;
                    check_readable(tl)?;
                }
                (None, None) => {}
                _ => return Err(usage("--test-images and --test-labels go together")),
            }
        }
        Ok(())
    }

    /// Train and test sets.
    pub fn load(&self) -> CliResult<(Dataset, Dataset)> {
        self.validate()?;
        let (train, test) = match self.data {
            DataSource::Blobs => {
                let mut all = synth_blobs(self.classes, self.dim, self.per_class, self.spread, self.data_seed)?;
                if self.ambient_dim > 0 {
                    all = lift_linear(&all, self.ambient_dim, self.data_seed ^ 0xa3b1)?;
                }
                all.split(self.test_fraction, self.data_seed)?
            }
            DataSource::Idx => {
                let all = load_idx(self.images.as_ref().unwrap(), self.labels.as_ref().unwrap())?;
                match (&self.test_images, &self.test_labels) {
                    (Some(ti), Some(tl)) => {
                        let mut test = load_idx(ti, tl)?;
                        test.classes = test.classes.max(all.classes);
                        let mut all = all;
                        all.classes = test.classes;
                        (all, test)
                    }
                    _ => all.split(self.test_fraction, self.data_seed)?,
                }
            }
        };
        let train = if self.train_limit > 0 && self.train_limit < train.len() {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            Rng::new(self.data_seed).shuffle(&mut idx);
            idx.truncate(self.train_limit);
            idx.sort_unstable();
            train.subset(&idx)?
        } else {
            train
        };
        if train.is_empty() || test.is_empty() {
            return Err(usage("train and test sets must both be nonempty"));
        }
        Ok((train, test))
    }
}

fn load_model(path: &Path, data: &Dataset) -> CliResult<Network> {
    check_readable(path)?;
    let net = Network::load(path)?;
    if net.input_dim() != data.dim() || net.classes() < data.classes {
        return Err(usage(format!(
            "model maps {} -> {} but the data has {} features and {} classes",
            net.input_dim(),
            net.classes(),
            data.dim(),
            data.classes
        )));
    }
    Ok(net)
}

fn check_hidden_layer(net: &Network, layer: usize) -> CliResult<()> {
    if layer + 1 >= net.depth() {
        return Err(usage(format!(
            "--layer {layer}: only hidden layers 0..{} can be pruned",
            net.depth().saturating_sub(1)
        )));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, w: &mut CsvOut, diag: &mut dyn Write) -> CliResult<()> {
    check_writable(&a.out)?;
    if a.hidden.contains(&0) {
        return Err(usage("hidden widths must be positive"));
    }
    let (train, test) = a.data.load()?;
    let mut dims = vec![train.dim()];
    dims.extend(&a.hidden);
    dims.push(train.classes);
    let params = TrainParams {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let start = Instant::now();
    let net = train_sgd(&Network::mlp(&dims, a.seed)?, &train, &params)?;
    let seconds = start.elapsed().as_secs_f64();
    net.save(&a.out)?;
    let (train_acc, test_acc) = (net.accuracy(&train)?, net.accuracy(&test)?);
    writeln!(diag, "train accuracy {train_acc:.4}, test accuracy {test_acc:.4}")?;
    w.write_record(TRAIN_HEADER)?;
    w.write_record([fmt(train_acc), fmt(test_acc), fmt(seconds)])?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, w: &mut CsvOut) -> CliResult<()> {
    let (train, test) = a.data.load()?;
    let net = load_model(&a.model, &train)?;
    w.write_record(EVAL_HEADER)?;
    w.write_record([fmt(net.accuracy(&train)?), fmt(net.accuracy(&test)?)])?;
    Ok(())
}

impl SolverArgs {
    fn config(&self, reg: Regularizer, seed: u64) -> CliResult<PruneConfig> {
        let cfg = PruneConfig {
            reg,
            smooth: SmoothReluParams::new(self.beta)?,
            outer_iters: self.outer_iters,
            solver: SolverParams {
                epochs: self.epochs,
                inner_steps: self.inner_steps,
                step_eta: self.eta,
                fallback_eta: (self.fallback_eta > 0.0).then_some(self.fallback_eta),
                momentum: self.momentum,
                minibatch: self.minibatch,
                seed,
            },
            convergence_tol: self.tol,
            keep_history: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One pruned-layer measurement.
struct PruneRow {
    method: &'static str,
    layer: usize,
    lambda: Option<f64>,
    sparsity: f64,
    rank: Option<usize>,
    cr: f64,
    layer_mse: f64,
    acc_before: f64,
    acc_after: f64,
    seconds: f64,
}

impl PruneRow {
    fn write(&self, w: &mut CsvOut) -> CliResult<()> {
        let na = || "NA".to_string();
        w.write_record([
            self.method.to_string(),
            self.layer.to_string(),
            self.lambda.map_or_else(na, fmt),
            fmt(self.sparsity),
            self.rank.map_or_else(na, |r| r.to_string()),
            fmt(self.cr),
            fmt(self.layer_mse),
            fmt(self.acc_before),
            fmt(self.acc_after),
            fmt(self.seconds),
        ])?;
        Ok(())
    }
}

/// Captured input/output of `layer` with the bias folded in as a last input column.
fn capture_folded(net: &Network, train: &Dataset, layer: usize, max_samples: usize, seed: u64) -> CliResult<LayerData> {
    let io = net.capture_layer_io(train, layer)?;
    let io = if max_samples > 0 && max_samples < io.samples() {
        io.select(&Rng::new(seed).sample_indices(io.samples(), max_samples))?
    } else {
        io
    };
    Ok(io.with_bias_column())
}

fn cmd_prune(a: &PruneArgs, w: &mut CsvOut) -> CliResult<()> {
    if let Some(out) = &a.out {
        check_writable(out)?;
    }
    if a.lambda.is_empty() && a.sparsity_target.is_none() {
        return Err(usage("give --lambda or --sparsity-target"));
    }
    if a.out.is_some() && a.lambda.len() > 1 {
        return Err(usage("--out needs a single --lambda"));
    }
    if let Some(t) = a.sparsity_target {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("--sparsity-target {t} outside [0, 1]")));
        }
    }
    if a.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(usage("--lambda values must be nonnegative"));
    }
    let (kind, method) = match a.reg {
        RegArg::L1 => (RegularizerKind::L1, "feta-l1"),
        RegArg::Nuclear => (RegularizerKind::Nuclear, "feta-nuclear"),
    };
    let base_cfg = a.solver.config(Regularizer::new(kind, 0.0)?.with_exempt_rows(1), a.seed)?;
    let (train, test) = a.data.load()?;
    let net = load_model(&a.model, &train)?;
    check_hidden_layer(&net, a.layer)?;

    let data = capture_folded(&net, &train, a.layer, a.max_samples, a.seed)?;
    let init = net.layers()[a.layer].folded_weights();
    let acc_before = net.accuracy(&test)?;
    let (d1, d2) = net.layers()[a.layer].weights.shape();

    let mut runs: Vec<(f64, PruneResult, f64)> = Vec::new();
    if let Some(target) = a.sparsity_target {
        let start = Instant::now();
        let search = lambda_for_sparsity(&data, &init, &base_cfg, target, TARGET_TOLERANCE, TARGET_MAX_EVALS)?;
        if !search.hit {
            log::warn!(
                "sparsity {:.4} after {} runs misses target {target} by more than {TARGET_TOLERANCE}",
                search.result.achieved_sparsity,
                search.evaluations
            );
        }
        runs.push((search.lambda, search.result, start.elapsed().as_secs_f64()));
    } else {
        for &lambda in &a.lambda {
            let cfg = PruneConfig {
                reg: base_cfg.reg.with_lambda(lambda)?,
                ..base_cfg.clone()
            };
            let start = Instant::now();
            let res = feta_prune(&data, &init, &cfg)?;
            runs.push((lambda, res, start.elapsed().as_secs_f64()));
        }
    }

    w.write_record(PRUNE_HEADER)?;
    let mut last = None;
    for (lambda, res, seconds) in runs {
        let pruned = net.replace_layer_folded(a.layer, &res.weights)?;
        let cr = match res.rank {
            Some(r) => compression_ratio(d1, d2, r),
            None => 1.0 - res.achieved_sparsity,
        };
        PruneRow {
            method,
            layer: a.layer,
            lambda: Some(lambda),
            sparsity: res.achieved_sparsity,
            rank: res.rank,
            cr,
            layer_mse: res.layer_mse,
            acc_before,
            acc_after: pruned.accuracy(&test)?,
            seconds,
        }
        .write(w)?;
        last = Some(pruned);
    }
    if let (Some(out), Some(pruned)) = (&a.out, last) {
        pruned.save(out)?;
    }
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs, w: &mut CsvOut) -> CliResult<()> {
    if let Some(out) = &a.out {
        check_writable(out)?;
    }
    match a.method {
        BaselineMethod::Threshold if a.sparsity.is_none() => {
            return Err(usage("threshold needs --sparsity"));
        }
        BaselineMethod::Svd if a.rank.is_none() && a.cr.is_none() => {
            return Err(usage("svd needs --rank or --cr"));
        }
        _ => {}
    }
    let (train, test) = a.data.load()?;
    let net = load_model(&a.model, &train)?;
    check_hidden_layer(&net, a.layer)?;
    let layer = &net.layers()[a.layer];
    let (d1, d2) = layer.weights.shape();

    let start = Instant::now();
    let (weights, sparsity, rank, cr, method) = match a.method {
        BaselineMethod::Threshold => {
            let target = a.sparsity.unwrap();
            if !(0.0..=1.0).contains(&target) {
                return Err(usage(format!("--sparsity {target} outside [0, 1]")));
            }
            let t = threshold_for_sparsity(&layer.weights, target)?;
            let pruned = hard_threshold(&layer.weights, t);
            let s = entry_sparsity(&pruned, d1);
            (pruned, s, None, 1.0 - s, "threshold")
        }
        BaselineMethod::Svd => {
            let k = match (a.rank, a.cr) {
                (Some(k), _) => k,
                (None, Some(cr)) => rank_for_compression_ratio(d1, d2, cr),
                _ => unreachable!(),
            };
            if k > d1.min(d2) {
                return Err(usage(format!("--rank {k} exceeds {}", d1.min(d2))));
            }
            let pruned = truncated_svd_compress(&layer.weights, k)?.reconstruct();
            let s = 1.0 - k as f64 / d1.min(d2) as f64;
            (pruned, s, Some(k), compression_ratio(d1, d2, k), "svd")
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let pruned = net.replace_layer(a.layer, weights)?;
    let data = net.capture_layer_io(&train, a.layer)?.with_bias_column();
    let mse = layer_mse(&pruned.layers()[a.layer].folded_weights(), &data, Rectifier::Relu)?;

    w.write_record(PRUNE_HEADER)?;
    PruneRow {
        method,
        layer: a.layer,
        lambda: None,
        sparsity,
        rank,
        cr,
        layer_mse: mse,
        acc_before: net.accuracy(&test)?,
        acc_after: pruned.accuracy(&test)?,
        seconds,
    }
    .write(w)?;
    if let Some(out) = &a.out {
        pruned.save(out)?;
    }
    Ok(())
}

/// Everything the bounds report needs, measured on a model pair.
#[derive(Debug, Clone)]
pub struct BoundsInputs {
    pub spectral_norms: Vec<f64>,
    pub min_score: f64,
    pub mean_score: f64,
    /// Largest squared per-sample output change of each layer on the test set.
    pub c_squared: Vec<f64>,
    /// Smallest squared per-sample output change of each layer on the test set.
    pub c_min: Vec<f64>,
    /// Fraction of training samples whose predicted class differs between
    /// the two models.
    pub flipped: f64,
}

/// Layer perturbations are measured by feeding each layer of both models
/// the original network's input to that layer.
pub fn measure_bounds_inputs(net: &Network, pruned: &Network, train: &Dataset, test: &Dataset) -> CliResult<BoundsInputs> {
    if net.depth() != pruned.depth()
        || net.layers().iter().zip(pruned.layers()).any(|(a, b)| a.weights.shape() != b.weights.shape())
    {
        return Err(usage("model and pruned model have different architectures"));
    }
    let spectral_norms = net
        .layers()
        .iter()
        .map(|l| spectral_norm(&l.weights))
        .collect::<feta::Result<Vec<_>>>()?;
    let mut c_squared = Vec::with_capacity(net.depth());
    let mut c_min = Vec::with_capacity(net.depth());
    let mut z = test.inputs.clone();
    for (orig, new) in net.layers().iter().zip(pruned.layers()) {
        let out = orig.forward_batch(&z)?;
        let out_pruned = new.forward_batch(&z)?;
        c_squared.push(bounds::estimate_c(&out, &out_pruned)?);
        c_min.push(bounds::min_layer_error(&out, &out_pruned)?);
        z = out;
    }
    Ok(BoundsInputs {
        spectral_norms,
        min_score: bounds::min_score(net, train)?,
        mean_score: bounds::mean_score(net, train)?,
        c_squared,
        c_min,
        flipped: flipped_fraction(net, pruned, train)?,
    })
}

fn flipped_fraction(net: &Network, pruned: &Network, data: &Dataset) -> CliResult<f64> {
    let before = net.predict_batch(&data.inputs)?;
    let after = pruned.predict_batch(&data.inputs)?;
    let changed = before.iter().zip(&after).filter(|(x, y)| x != y).count();
    Ok(changed as f64 / before.len().max(1) as f64)
}

/// The ratio prediction for a pruned model: `base_ge` scaled by the mean
/// score over the mean score minus the propagated minimum layer errors.
pub fn predicted_ge(inputs: &BoundsInputs, base_ge: f64, k: f64) -> CliResult<BoundValue> {
    Ok(bounds::ge_ratio_prediction(base_ge, inputs.mean_score, &inputs.c_min, &inputs.spectral_norms, k)?)
}

fn cmd_bounds(a: &BoundsArgs, w: &mut CsvOut, diag: &mut dyn Write) -> CliResult<()> {
    if !(a.k > 0.0) {
        return Err(usage(format!("--k must be positive, got {}", a.k)));
    }
    if !(a.base_ge >= 0.0) {
        return Err(usage("--base-ge must be nonnegative"));
    }
    check_readable(&a.pruned_model)?;
    let (train, test) = a.data.load()?;
    let mp = ManifoldParams::new(a.cm, a.k, train.classes, train.len(), a.delta)?;
    let net = load_model(&a.model, &train)?;
    let pruned = load_model(&a.pruned_model, &train)?;
    let m = measure_bounds_inputs(&net, &pruned, &train, &test)?;
    if !(m.min_score > 0.0) {
        return Err(CliError::Numerical(format!(
            "minimum training score is {}: some training sample sits on a decision boundary",
            m.min_score
        )));
    }
    let gamma = bounds::margin_gamma(m.min_score, &m.spectral_norms)?;

    let mut rows: Vec<(String, Option<usize>, f64, f64, bounds::GeBoundReport)> = Vec::new();
    let base = bounds::ge_bound_base(gamma, &mp)?;
    rows.push(("base".into(), None, m.min_score, 0.0, base.clone()));
    for (i, &c) in m.c_squared.iter().enumerate().filter(|(_, c)| **c > 0.0) {
        let r = bounds::ge_bound_single_layer(gamma, c, &m.spectral_norms, i, &mp)?;
        rows.push(("single".into(), Some(i), m.min_score, c, r));
    }
    let multi = bounds::ge_bound_multi_layer(gamma, &m.c_squared, &m.spectral_norms, &mp)?;
    let total_c: f64 = m.c_squared.iter().sum();
    rows.push(("multi".into(), None, m.min_score, total_c, multi));

    w.write_record(BOUNDS_HEADER)?;
    let na = || "NA".to_string();
    let mut any_finite = false;
    writeln!(diag, "{:<7} {:>5} {:>12} {:>12} {:>12} {:>12}", "kind", "layer", "gamma", "C_emp", "penalty", "bound")?;
    for (kind, layer, score, c, r) in &rows {
        any_finite |= !r.bound.is_vacuous();
        writeln!(
            diag,
            "{kind:<7} {:>5} {:>12.5e} {:>12.5e} {:>12.5e} {:>12}",
            layer.map_or_else(na, |l| l.to_string()),
            r.gamma,
            c,
            r.penalty,
            r.bound
        )?;
        w.write_record([
            kind.clone(),
            layer.map_or_else(na, |l| l.to_string()),
            fmt(*score),
            fmt(r.gamma),
            fmt(*c),
            fmt(r.penalty),
            fmt(r.a_const),
            fmt(r.b_const),
            r.bound.to_string(),
        ])?;
    }
    let prediction = predicted_ge(&m, a.base_ge, a.k)?;
    let propagated = bounds::PerturbationProfile::new(m.c_min.clone(), m.spectral_norms.clone())?.propagated();
    writeln!(diag, "predicted GE {prediction} (base {}, mean score {:.5e})", a.base_ge, m.mean_score)?;
    writeln!(diag, "training predictions changed by pruning: {:.4}", m.flipped)?;
    w.write_record([
        "predicted".to_string(),
        na(),
        fmt(m.mean_score),
        na(),
        fmt(m.c_min.iter().sum()),
        fmt(propagated),
        na(),
        na(),
        prediction.to_string(),
    ])?;
    if a.require_finite && !any_finite {
        return Err(CliError::Numerical("every bound is vacuous".into()));
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// distinct `x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if lx.len() < 2 || sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_bench(a: &BenchArgs, w: &mut CsvOut, diag: &mut dyn Write) -> CliResult<()> {
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if a.d1_list.is_empty() || a.d1_list.contains(&0) || a.d2 == 0 || a.n == 0 {
        return Err(usage("dimensions must be positive"));
    }
    let cfg = PruneConfig {
        reg: Regularizer::l1(a.lambda)?,
        outer_iters: a.outer_iters,
        solver: SolverParams {
            epochs: a.epochs,
            step_eta: a.eta,
            fallback_eta: None,
            minibatch: a.minibatch,
            seed: a.seed,
            ..SolverParams::default()
        },
        convergence_tol: 0.0,
        ..PruneConfig::default()
    };
    cfg.validate()?;

    let mut problems = Vec::with_capacity(a.d1_list.len());
    for &d1 in &a.d1_list {
        let spec = ToySpec {
            d1,
            d2: a.d2,
            samples: a.n,
            seed: a.seed,
        };
        let data = toy_gaussian(spec, false)?;
        let init = Rng::new(a.seed ^ 0x5eed).gaussian_matrix(d1, a.d2).scaled(1.0 / (d1 as f64).sqrt());
        // untimed warm-up
        std::hint::black_box(feta_prune(&data, &init, &cfg)?);
        problems.push((data, init));
    }
    // Sizes take turns within each rep so load changes hit all of them.
    let mut times = vec![Vec::with_capacity(a.reps); problems.len()];
    for _ in 0..a.reps {
        for ((data, init), t) in problems.iter().zip(&mut times) {
            let start = Instant::now();
            std::hint::black_box(feta_prune(data, init, &cfg)?);
            t.push(start.elapsed().as_secs_f64());
        }
    }
    let medians: Vec<f64> = times.iter_mut().map(|t| median(t)).collect();
    for (d1, med) in a.d1_list.iter().zip(&medians) {
        writeln!(diag, "d1 {d1}: median {med:.4} s over {} reps", a.reps)?;
    }
    let x: Vec<f64> = a.d1_list.iter().map(|&d| d as f64).collect();
    let slope = log_log_slope(&x, &medians).map_or_else(|| "NA".to_string(), fmt);
    w.write_record(BENCH_HEADER)?;
    for (&d1, med) in a.d1_list.iter().zip(&medians) {
        w.write_record([
            d1.to_string(),
            a.d2.to_string(),
            a.n.to_string(),
            a.reps.to_string(),
            fmt(*med),
            slope.clone(),
        ])?;
    }
    Ok(())
}

/// Reads CSV text into a header and rows; used by tests and scripts.
pub fn parse_csv(text: &[u8]) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(text);
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

//! Command-line interface.
//!
//! Machine-readable results go to stdout as one JSON object per line; prose
//! goes to stderr. Exit codes: 0 success, 1 invalid input, 2 training
//! aborted, 3 gradient check failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{self, ColumnRef, Dataset, SyntheticKind, DEFAULT_CIRCLE_NOISE};
use crate::error::{Error, Result};
use crate::eval;
use crate::gradcheck::{self, GradCheckConfig};
use crate::kernel::Kernel;
use crate::model_file;
use crate::trainer::{self, default_sigma_grid, Mode, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_ABORTED: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lmdl", version, about = "Local Mahalanobis distance learning for prototype nearest-neighbor classification")]
struct Cli {
    /// Cap on worker threads for folds and grid search.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it as JSON.
    Train(TrainCmd),
    /// Cross-validate training flags, or score a saved model on a dataset.
    Evaluate(EvaluateCmd),
    /// Export each point projected by its nearest prototype's metric.
    Project(ProjectCmd),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckCmd),
    /// Write a synthetic dataset as CSV.
    Synth(SynthCmd),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by name or zero-based index (default: last column).
    #[arg(long)]
    label: Option<ColumnRef>,
    /// Columns to one-hot encode (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<ColumnRef>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let label = match &self.label {
            Some(c) => c.clone(),
            None => ColumnRef::Index(last_column(&self.data)?),
        };
        data::load_csv(&self.data, &label, &self.categorical)
    }
}

fn last_column(path: &Path) -> Result<usize> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let n = reader.headers().map_err(csv_err)?.len();
    n.checked_sub(1).ok_or_else(|| Error::InvalidDataset("empty header".into()))
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long, default_value_t = trainer::DEFAULT_PROTOTYPES_PER_CLASS)]
    prototypes_per_class: usize,
    /// Factor width p (default: input dimension).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = crate::objective::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_EPSILON_CONVERGE)]
    epsilon_converge: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_MAX_EPOCHS)]
    max_epochs: usize,
    #[arg(long, default_value_t = trainer::adadelta::DEFAULT_RHO)]
    rho: f64,
    #[arg(long, default_value_t = trainer::adadelta::DEFAULT_EPS)]
    eps_ada: f64,
    #[arg(long, env = "LMDL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = Mode::Linear)]
    mode: Mode,
    /// `linear` or `rbf` (kernel mode only, default rbf).
    #[arg(long)]
    kernel: Option<Kernel>,
    /// Fixed rbf width.
    #[arg(long)]
    sigma: Option<f64>,
    /// `default` (2^-15 .. 2^3) or a comma-separated list; picks sigma by
    /// internal cross-validation.
    #[arg(long)]
    sigma_grid: Option<String>,
    #[arg(long, default_value_t = 10)]
    sigma_folds: usize,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = trainer::DEFAULT_INIT_NOISE)]
    init_noise: f64,
}

impl TrainFlags {
    fn config(&self) -> Result<TrainConfig> {
        let kernel = match (self.mode, self.kernel) {
            (Mode::Linear, None) => None,
            (Mode::Linear, Some(_)) => return Err(Error::InvalidConfig("--kernel requires --mode kernel".into())),
            (Mode::Kernel, k) => Some(match (k.unwrap_or(Kernel::Rbf { sigma: 1.0 }), self.sigma) {
                (Kernel::Rbf { .. }, Some(s)) => Kernel::rbf(s)?,
                (Kernel::Linear, Some(_)) => return Err(Error::InvalidConfig("--sigma needs the rbf kernel".into())),
                (k, None) => k,
            }),
        };
        let sigma_grid = match self.sigma_grid.as_deref() {
            None => None,
            Some("default") => Some(default_sigma_grid()),
            Some(list) => Some(
                list.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad sigma {v:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        if sigma_grid.is_some() && !matches!(kernel, Some(Kernel::Rbf { .. })) {
            return Err(Error::InvalidConfig("--sigma-grid needs --mode kernel with the rbf kernel".into()));
        }
        let cfg = TrainConfig {
            prototypes_per_class: self.prototypes_per_class,
            rank: self.rank,
            beta: self.beta,
            epsilon_converge: self.epsilon_converge,
            max_epochs: self.max_epochs,
            rho: self.rho,
            eps_ada: self.eps_ada,
            seed: self.seed,
            mode: self.mode,
            kernel,
            sigma_grid,
            sigma_folds: self.sigma_folds,
            standardize: !self.no_standardize,
            init_noise: self.init_noise,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateCmd {
    #[command(flatten)]
    data: DataArgs,
    /// Score this model on the dataset instead of cross-validating.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Also write the report (pretty-printed) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Projection CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 4)]
    prototypes: usize,
    #[arg(long, default_value_t = crate::objective::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, env = "LMDL_SEED", default_value_t = 0)]
    seed: u64,
    /// Negative control: perturb one analytic gradient block.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Debug, Args)]
struct SynthCmd {
    #[arg(long)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_CIRCLE_NOISE)]
    noise: f64,
    #[arg(long, env = "LMDL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point of the `lmdl` binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: --threads ignored: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Project(c) => cmd_project(c),
        Command::Gradcheck(c) => cmd_gradcheck(c),
        Command::Synth(c) => cmd_synth(c),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingAborted { .. } | Error::NonFiniteGradient => EXIT_ABORTED,
        _ => EXIT_INVALID,
    }
}

fn emit(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{value}").map_err(|source| Error::Io { path: "<stdout>".into(), source })
}

fn cmd_train(c: TrainCmd) -> Result<i32> {
    let ds = c.data.load()?;
    let cfg = c.train.config()?;
    let start = Instant::now();
    let model = trainer::train(&ds, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    model_file::save(&model, &c.out)?;
    eprintln!(
        "trained {} prototypes on {} points in {} epochs; model written to {}",
        model.prototypes.len(),
        ds.len(),
        model.summary.epochs,
        c.out.display()
    );
    emit(&json!({
        "initial_objective": model.summary.initial_objective,
        "final_objective": model.summary.final_objective,
        "epochs": model.summary.epochs,
        "converged": model.summary.converged,
        "elapsed_seconds": elapsed,
        "prototypes": model.prototypes.len(),
        "rank": model.rank(),
        "sigma": model.kernel.as_ref().and_then(|kd| kd.kernel.sigma()),
    }))?;
    Ok(EXIT_OK)
}

fn cmd_evaluate(c: EvaluateCmd) -> Result<i32> {
    let ds = c.data.load()?;
    let report = match &c.model {
        Some(path) => eval::holdout(&ds, &model_file::load(path)?)?,
        None => eval::cross_validate(&ds, &c.train.config()?, c.folds, c.repeats, c.train.seed)?,
    };
    eprintln!("mean error {:.4} (std {:.4}) over {} fold(s)", report.mean_error, report.std_error, report.per_fold_errors.len());
    if let Some(path) = &c.out {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    }
    emit(&serde_json::to_value(&report)?)?;
    Ok(EXIT_OK)
}

fn cmd_project(c: ProjectCmd) -> Result<i32> {
    let model = model_file::load(&c.model)?;
    let ds = c.data.load()?.align_classes(&model.class_names)?;
    let (z, nearest) = eval::projected_view(&ds, &model)?;
    let io_err = |source| Error::Io { path: c.out.clone(), source };
    let csv_err = |source| Error::Csv { path: c.out.clone(), source };
    let file = std::fs::File::create(&c.out).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (1..=z.nrows()).map(|k| format!("z{k}")).collect();
    header.extend(["true_label", "predicted_label", "prototype_index"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for (i, &s) in nearest.iter().enumerate() {
        let mut row: Vec<String> = z.column(i).iter().map(|v| v.to_string()).collect();
        row.push(model.class_names[ds.label(i) - 1].clone());
        row.push(model.class_names[model.prototypes.labels()[s] - 1].clone());
        row.push(s.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    emit(&json!({ "rows": ds.len(), "rank": z.nrows(), "out": c.out.display().to_string() }))?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(c: GradcheckCmd) -> Result<i32> {
    let cfg = GradCheckConfig {
        dim: c.dim,
        rank: c.rank,
        prototypes: c.prototypes,
        beta: c.beta,
        trials: c.trials,
        seed: c.seed,
        corrupt: c.corrupt_gradient,
        ..Default::default()
    };
    let report = gradcheck::run(&cfg)?;
    emit(&serde_json::to_value(&report)?)?;
    if report.passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed: max relative error {:.3e} > {:.1e}", report.max_rel_error, report.tolerance);
        Ok(EXIT_GRADCHECK)
    }
}

fn cmd_synth(c: SynthCmd) -> Result<i32> {
    let ds = data::generate_synthetic(c.kind, c.n, c.noise, c.seed)?;
    data::write_csv(&ds, &c.out)?;
    emit(&json!({
        "kind": c.kind.to_string(),
        "rows": ds.len(),
        "features": ds.dim(),
        "classes": ds.class_count(),
        "out": c.out.display().to_string(),
    }))?;
    Ok(EXIT_OK)
}

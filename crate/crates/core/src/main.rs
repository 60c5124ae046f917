//! Command-line interface: dataset synthesis, training, prediction,
//! benchmarking, and theory diagnostics.
//!
//! Exit codes: 0 on success, 2 for input/parse/io errors, 3 for numerical
//! failures. Configuration comes from an optional file (JSON object or
//! `key = value` lines) with individual flags taking precedence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use park::harness::{
    execute, is_dataset_cache, load_csv, load_dataset, save_dataset, synth_fixed_design,
    BlobArrangement, CsvSchema, Dataset, RunConfig, RunReport, SynthSpec, Task,
};
use park::kernel::{KernelFamily, KernelSpec};
use park::model_io::load_model;
use park::{ParkError, Result};

#[derive(Parser)]
#[command(
    name = "park",
    version,
    about = "Partitioned kernel ridge regression: feature-space Voronoi cells with \
             sketch-preconditioned local solvers",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixed-design dataset cache with ground truth
    Synth(SynthArgs),
    /// Train an estimator and report error, timings, and optional outputs
    Train(RunArgs),
    /// Apply a saved model to a dataset and emit predictions
    Predict(PredictArgs),
    /// Benchmark run: holds out a test split (default 20%) for evaluation
    Bench(RunArgs),
    /// Train on synthetic data and evaluate the full theory report
    Diagnose(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Destination cache file
    #[arg(long)]
    out: PathBuf,
    /// Number of points
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Input dimension
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Number of gaussian blobs
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    /// Observation-noise standard deviation
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Blob-center distance from the origin (unit blob deviation)
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of points carrying a nonzero target coefficient
    #[arg(long, default_value_t = 0.05)]
    support_fraction: f64,
    /// regression | binary
    #[arg(long, default_value = "regression")]
    task: String,
    /// isotropic | axis (axis blobs spread along their own coordinate axis,
    /// giving exactly orthogonal cell spans; requires clusters <= d)
    #[arg(long, default_value = "isotropic")]
    arrangement: String,
    /// Kernel of the ground-truth expansion: gaussian | laplacian | linear
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// Length-scale of the ground-truth kernel (ignored for linear)
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
}

/// Flags mirroring the run-configuration keys; every present flag overrides
/// the corresponding config-file entry.
#[derive(Args, Default)]
struct ConfigFlags {
    /// park | park-uni | dnc-v1 | dnc-v2 | falkon-global | krr-exact
    #[arg(long)]
    mode: Option<String>,
    /// gaussian | laplacian | linear
    #[arg(long)]
    kernel: Option<String>,
    /// Kernel length-scale (default: median pairwise distance heuristic)
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Number of cells Q
    #[arg(long)]
    cells: Option<usize>,
    /// Global regularization (default: 1/sqrt(n)); cells use lambda/rho_q
    #[arg(long)]
    lambda: Option<f64>,
    /// Total center budget m (default: 4 sqrt(n)); cells get ceil(m rho_q)
    #[arg(long)]
    centers: Option<usize>,
    /// Solver iterations per cell
    #[arg(long)]
    iterations: Option<usize>,
    /// Center-budget multiplier applied by mode dnc-v2
    #[arg(long)]
    center_multiplier: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeated trials (reported as mean +- std)
    #[arg(long)]
    trials: Option<usize>,
    /// Held-out evaluation fraction in [0, 1)
    #[arg(long)]
    test_fraction: Option<f64>,
    /// rmse | mse | c-err | 1-auc (default: rmse, or c-err for binary)
    #[arg(long)]
    metric: Option<String>,
    /// Evaluate the theory report (needs synthetic ground truth)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    diagnostics: Option<bool>,
    /// Confidence parameter of the probabilistic bounds
    #[arg(long)]
    delta: Option<f64>,
    /// Row-block size for streamed kernel products
    #[arg(long)]
    block_rows: Option<usize>,
    /// Train cells concurrently (identical results either way)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    parallel_cells: Option<bool>,
    /// Input data: binary cache or CSV (detected by file magic)
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV column holding the label
    #[arg(long)]
    label_column: Option<usize>,
    /// CSV field delimiter (single byte)
    #[arg(long)]
    delimiter: Option<String>,
    /// CSV file starts with a header row
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    has_header: Option<bool>,
    /// regression | binary (CSV only; caches carry their task)
    #[arg(long)]
    task: Option<String>,
    /// JSON report destination
    #[arg(long)]
    output: Option<PathBuf>,
    /// Summary-table destination (CSV: error, init, train, total)
    #[arg(long)]
    csv_output: Option<PathBuf>,
    /// Trained-model destination (last trial)
    #[arg(long)]
    model_output: Option<PathBuf>,
}

impl ConfigFlags {
    /// Collect the flags that were actually given, keyed by config name.
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        fn path_value(p: &Path) -> Value {
            Value::String(p.to_string_lossy().into_owned())
        }
        macro_rules! take {
            ($field:ident, $to:expr) => {
                if let Some(v) = &self.$field {
                    out.push((stringify!($field).to_string(), $to(v)));
                }
            };
        }
        take!(mode, |v: &String| Value::String(v.clone()));
        take!(kernel, |v: &String| Value::String(v.clone()));
        take!(bandwidth, |v: &f64| json!(v));
        take!(cells, |v: &usize| json!(v));
        take!(lambda, |v: &f64| json!(v));
        take!(centers, |v: &usize| json!(v));
        take!(iterations, |v: &usize| json!(v));
        take!(center_multiplier, |v: &f64| json!(v));
        take!(seed, |v: &u64| json!(v));
        take!(trials, |v: &usize| json!(v));
        take!(test_fraction, |v: &f64| json!(v));
        take!(metric, |v: &String| Value::String(v.clone()));
        take!(diagnostics, |v: &bool| json!(v));
        take!(delta, |v: &f64| json!(v));
        take!(block_rows, |v: &usize| json!(v));
        take!(parallel_cells, |v: &bool| json!(v));
        take!(data, |v: &PathBuf| path_value(v));
        take!(label_column, |v: &usize| json!(v));
        take!(delimiter, |v: &String| Value::String(v.clone()));
        take!(has_header, |v: &bool| json!(v));
        take!(task, |v: &String| Value::String(v.clone()));
        take!(output, |v: &PathBuf| path_value(v));
        take!(csv_output, |v: &PathBuf| path_value(v));
        take!(model_output, |v: &PathBuf| path_value(v));
        out
    }
}

#[derive(Args)]
struct RunArgs {
    /// Config file: JSON object or `key = value` lines ('#' comments)
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model file
    #[arg(long)]
    model: PathBuf,
    /// Dataset to score: binary cache or CSV in the training schema
    /// (labels present but ignored)
    #[arg(long)]
    data: PathBuf,
    /// Predictions destination, one value per line; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV column holding the (ignored) label
    #[arg(long, default_value_t = 0)]
    label_column: usize,
    /// CSV field delimiter (single byte)
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// CSV file starts with a header row
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    has_header: Option<bool>,
    /// regression | binary (CSV label handling only)
    #[arg(long, default_value = "regression")]
    task: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("park: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(&args),
        Command::Train(args) => run_command(&args, false, false),
        Command::Bench(args) => run_command(&args, true, false),
        Command::Diagnose(args) => run_command(&args, false, true),
        Command::Predict(args) => predict(&args),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let family: KernelFamily = args.kernel.parse()?;
    let spec = match family {
        KernelFamily::Linear => KernelSpec::linear(),
        _ => KernelSpec::new(family, args.bandwidth)?,
    };
    let synth_spec = SynthSpec {
        n: args.n,
        d: args.d,
        clusters: args.clusters,
        noise: args.noise,
        separation: args.separation,
        seed: args.seed,
        support_fraction: args.support_fraction,
        task: args.task.parse::<Task>()?,
        arrangement: args.arrangement.parse::<BlobArrangement>()?,
    };
    let dataset = synth_fixed_design(&synth_spec, &spec)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {}: n={} d={} clusters={} task={} ({} arrangement, {} truth kernel)",
        args.out.display(),
        dataset.n(),
        dataset.d(),
        args.clusters,
        dataset.task,
        args.arrangement,
        spec.family,
    );
    Ok(())
}

/// Shared train/bench/diagnose path. `bench` defaults the test fraction to
/// 0.2; `diagnose` forces the theory report on.
fn run_command(args: &RunArgs, bench: bool, diagnose: bool) -> Result<()> {
    let base = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(&args.flags.overrides())?;
    if bench && config.test_fraction.is_none() {
        config.test_fraction = Some(0.2);
    }
    if diagnose {
        config.diagnostics = true;
    }
    let report = execute(&config)?;
    print_summary(&report);
    if diagnose {
        print_diagnostics(&report);
    }
    Ok(())
}

fn print_summary(report: &RunReport) {
    let d = &report.dataset;
    println!(
        "dataset {}: {} train / {} test rows, d={}, task={}",
        d.name, d.n_train, d.n_test, d.d, d.task
    );
    let c = &report.config;
    println!(
        "mode {} | kernel {} (bandwidth {:.6}) | cells {} | lambda {:.6e} | centers {} | iterations {}",
        c.mode,
        c.kernel,
        c.bandwidth.unwrap_or(f64::NAN),
        c.cells,
        c.lambda.unwrap_or(f64::NAN),
        c.centers.unwrap_or(0),
        c.iterations
    );
    let s = &report.summary;
    match (s.error_mean, s.error_std) {
        (Some(mean), Some(std)) if s.succeeded > 1 => {
            println!(
                "{}: {:.6} +- {:.6} over {} trials",
                report.metric, mean, std, s.succeeded
            );
        }
        (Some(mean), _) => println!("{}: {:.6}", report.metric, mean),
        _ => {}
    }
    let risks: Vec<f64> = report.trials.iter().filter_map(|t| t.excess_risk).collect();
    if !risks.is_empty() {
        let mean = risks.iter().sum::<f64>() / risks.len() as f64;
        println!("excess risk: {mean:.6e}");
    }
    println!(
        "seconds: init {:.3} | train {:.3} | total {:.3}",
        s.init_mean, s.train_mean, s.total_mean
    );
    if let Some(failure) = report.first_failure() {
        println!("FAILED: {failure}");
    }
    for (label, path) in [
        ("report", &report.config.output),
        ("table", &report.config.csv_output),
        ("model", &report.config.model_output),
    ] {
        if let Some(p) = path {
            println!("wrote {label} {}", p.display());
        }
    }
}

fn print_diagnostics(report: &RunReport) {
    let Some(diag) = report.trials.iter().rev().find_map(|t| t.diagnostics.as_ref()) else {
        return;
    };
    println!("-- theory report (last trial) --");
    if !diag.truth_kernel_consistent {
        println!(
            "  WARNING: stored target values do not match the model kernel; the data \
             was generated under a different kernel or bandwidth, so norm/projection \
             bounds below are not meaningful. Re-run with the generating kernel."
        );
    }
    println!(
        "excess risk {:.6e} | risk-decomposition gap {:.3e} | cos(theta) {:.6} | N(lambda) {:.3}",
        diag.risk, diag.risk_identity_gap, diag.cos_theta, diag.effective_dimension
    );
    for check in &diag.checks {
        println!(
            "  {:<18} {}  lhs {:.6e}  rhs {:.6e}",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.lhs,
            check.rhs
        );
    }
    let compliant = diag
        .side_conditions
        .iter()
        .filter(|c| c.lambda_ok && c.centers_ok && c.iterations_ok)
        .count();
    println!(
        "  side conditions: {}/{} cells compliant | rate prerequisite {}",
        compliant,
        diag.side_conditions.len(),
        if diag.rate_prerequisite_ok { "ok" } else { "violated" }
    );
}

fn predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_predict_dataset(args)?;
    let predictions = model.predict_batch(&dataset.x)?;
    match &args.output {
        Some(path) => {
            use std::io::Write;
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            for v in predictions.iter() {
                writeln!(w, "{v}")?;
            }
            w.flush()?;
            println!("wrote {} predictions to {}", predictions.len(), path.display());
        }
        None => {
            for v in predictions.iter() {
                println!("{v}");
            }
        }
    }
    Ok(())
}

fn load_predict_dataset(args: &PredictArgs) -> Result<Dataset> {
    if is_dataset_cache(&args.data)? {
        return load_dataset(&args.data);
    }
    if args.delimiter.as_bytes().len() != 1 {
        return Err(ParkError::Input(format!(
            "delimiter must be a single byte, got '{}'",
            args.delimiter
        )));
    }
    let schema = CsvSchema {
        label_column: args.label_column,
        delimiter: args.delimiter.as_bytes()[0],
        has_header: args.has_header.unwrap_or(false),
        task: args.task.parse::<Task>()?,
    };
    load_csv(&args.data, &schema)
}

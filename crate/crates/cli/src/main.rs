//! `nargof`: kernel constants, simulation, fitting, the goodness-of-fit test
//! and Monte Carlo experiments from a TOML config.
//!
//! Exit status: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use nargof::brtest::{standardize_null, NullReference};
use nargof::data::read_observations;
use nargof::density::{estimation_grid, kde, EstimateSource};
use nargof::estimation::{fit_cls, gradient_sum_exponent, SeriesBattery};
use nargof::montecarlo::{convergence_diagnostics, derive_seed, run_experiment, Fingerprint};
use nargof::processes::{simulate_series, AutoregressiveModel};
use nargof::{Error, ExperimentConfig, KernelSpec, SampleSeries};

#[derive(Parser)]
#[command(name = "nargof", version, about = "Goodness-of-fit tests for autoregressive error densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print r_k, r_kk and sigma2_k of a kernel as JSON.
    Constants { kernel: String },
    /// Simulate one series and write series.csv.
    Simulate(RunArgs),
    /// Fit the model to one series and write fit.json.
    Fit(RunArgs),
    /// Fit, estimate the residual density and run the test; writes outcome.json and density.csv.
    Test(RunArgs),
    /// Run a Monte Carlo experiment; writes report.json, replications.csv and aggregates.csv.
    Mc(RunArgs),
    /// Monte Carlo run plus convergence and gradient-growth diagnostics; writes diagnostics.json.
    Diagnose(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces both experiment.master_seed and sample.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo runs; never changes the output.
    #[arg(long)]
    workers: Option<usize>,
    /// `section.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Observation file for fit and test (overrides sample.data).
    #[arg(long)]
    data: Option<PathBuf>,
}

enum Failure {
    Lib(Error),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::InsufficientData(_) | Error::MalformedData { .. } | Error::Io(_) | Error::Csv(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Constants { kernel } => constants(&kernel),
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
        Command::Test(a) => test(&a),
        Command::Mc(a) => mc(&a),
        Command::Diagnose(a) => diagnose(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
    }
}

fn print_json(v: &Value) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn constants(name: &str) -> Result<(), Failure> {
    let k = KernelSpec::from_name(name)?;
    let c = k.constants::<f64>();
    let exact = k.exact_constants();
    print_json(&json!({
        "kernel": k.name(),
        "r_k": c.r_k,
        "r_kk": c.r_kk,
        "sigma2_k": c.sigma2_k,
        "exact": {
            "r_k": exact.r_k.to_string(),
            "r_kk": exact.r_kk.to_string(),
            "sigma2_k": exact.sigma2_k.to_string(),
        },
    }))
}

/// Loads the config, applies `--set` and `--seed`, and writes `manifest.json`.
fn setup(command: &str, a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::load(&a.config, &a.overrides)?;
    if let Some(seed) = a.seed {
        config.experiment.master_seed = seed;
        config.sample.seed = seed;
    }
    if let Some(data) = &a.data {
        config.sample.data = Some(data.clone());
    }
    config.resolve()?;
    fs::create_dir_all(&a.out)?;
    let manifest = json!({
        "command": command,
        "config_path": a.config,
        "overrides": a.overrides,
        "config": serde_json::to_value(&config)?,
        "software": serde_json::to_value(Fingerprint::current())?,
    });
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(config)
}

fn workers(a: &RunArgs) -> usize {
    a.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// The configured series: read from the data file or simulated.
fn load_series(config: &ExperimentConfig) -> Result<SampleSeries, Failure> {
    let model = config.model_spec()?;
    let p = AutoregressiveModel::<f64>::order(&model);
    match &config.sample.data {
        Some(path) => Ok(SampleSeries::from_observations(read_observations(path)?, p)?),
        None => Ok(simulate_series(
            &model,
            &config.model.theta,
            &config.error_spec()?,
            config.sample.n,
            config.experiment.burn_in,
            config.sample.seed,
        )?),
    }
}

fn simulate(a: &RunArgs) -> Result<(), Failure> {
    let mut config = setup("simulate", a)?;
    config.sample.data = None;
    let s = load_series(&config)?;
    let mut out = String::from("i,x,error\n");
    for (j, x) in s.values.iter().enumerate() {
        let i = j as i64 - s.order as i64 + 1;
        let e = if j >= s.order { format!("{:e}", s.errors_true[j - s.order]) } else { String::new() };
        out.push_str(&format!("{i},{x:e},{e}\n"));
    }
    fs::write(a.out.join("series.csv"), out)?;
    print_json(&json!({ "n": s.len(), "order": s.order, "seed": s.seed, "file": a.out.join("series.csv") }))
}

fn run_fit(config: &ExperimentConfig, s: &SampleSeries) -> Result<nargof::FitResult, Failure> {
    Ok(fit_cls(&config.model_spec()?, s, &config.model.theta)?)
}

fn fit_summary(fit: &nargof::FitResult, n: usize) -> Value {
    json!({
        "n": n,
        "theta_hat": fit.theta_hat,
        "sse": fit.sse,
        "converged": fit.converged,
        "iterations": fit.iterations,
    })
}

fn fit(a: &RunArgs) -> Result<(), Failure> {
    let config = setup("fit", a)?;
    let s = load_series(&config)?;
    let fit = run_fit(&config, &s)?;
    let summary = fit_summary(&fit, s.len());
    fs::write(a.out.join("fit.json"), serde_json::to_string_pretty(&summary)?)?;
    print_json(&summary)?;
    if !fit.converged {
        return Err(Failure::NotConverged(format!("fit did not converge in {} iterations", fit.iterations)));
    }
    Ok(())
}

fn test(a: &RunArgs) -> Result<(), Failure> {
    let config = setup("test", a)?;
    let r = config.resolve()?;
    let s = load_series(&config)?;
    let fit = run_fit(&config, &s)?;
    if !fit.converged {
        return Err(Failure::NotConverged(format!(
            "fit did not converge in {} iterations; no test decision",
            fit.iterations
        )));
    }
    let n = s.len();
    let (h, bandwidth) = r.schedule.bandwidth(n)?;
    for w in &bandwidth.warnings {
        eprintln!("warning: {w}");
    }
    let grid = estimation_grid(&[&fit.residuals[..]], r.kernel, h)?;
    let fhat = kde(&fit.residuals, r.kernel, h, grid, EstimateSource::Residuals)?;
    let t_stat = NullReference::new(r.kernel, h, r.f0)?.statistic(&fhat)?;
    let outcome = standardize_null(t_stat, n, h, r.kernel, &r.f0)?;
    fhat.write_csv(fs::File::create(a.out.join("density.csv"))?)?;
    let mut value = serde_json::to_value(&outcome)?;
    value["reject"] = json!(outcome.p_value < r.level);
    value["level"] = json!(r.level);
    value["fit"] = fit_summary(&fit, n);
    fs::write(a.out.join("outcome.json"), serde_json::to_string_pretty(&value)?)?;
    print_json(&value)
}

fn mc(a: &RunArgs) -> Result<(), Failure> {
    let config = setup("mc", a)?;
    let report = run_experiment(&config, workers(a))?;
    report.write_files(&a.out)?;
    let rows: Vec<Value> = report
        .aggregates
        .iter()
        .map(|g| {
            json!({
                "n": g.n,
                "h": g.h,
                "failed": g.failed,
                "rejection_rate": g.rejection_rate,
                "z_mean": g.z_mean,
                "z_variance": g.z_variance,
                "z_ks_distance": g.normality.map(|d| d.ks_distance),
            })
        })
        .collect();
    print_json(&json!({ "aggregates": rows, "out": a.out }))
}

fn diagnose(a: &RunArgs) -> Result<(), Failure> {
    let config = setup("diagnose", a)?;
    let report = run_experiment(&config, workers(a))?;
    report.write_files(&a.out)?;
    let convergence = convergence_diagnostics(&report)?;
    let exponent = gradient_exponent(&config)?;
    let value = json!({
        "convergence": serde_json::to_value(&convergence)?,
        "gradient_sum_exponent": serde_json::to_value(&exponent)?,
    });
    write_json(&a.out.join("diagnostics.json"), &value)?;
    print_json(&value)
}

/// Gradient-sum growth exponent over the series of the Monte Carlo grid.
fn gradient_exponent(config: &ExperimentConfig) -> Result<nargof::estimation::ExponentEstimate, Failure> {
    let model = config.model_spec()?;
    let errors = config.error_spec()?;
    let e = &config.experiment;
    let mut cells = Vec::new();
    for &n in &e.n_grid {
        let series = (0..e.replications)
            .map(|rep| {
                simulate_series(&model, &config.model.theta, &errors, n, e.burn_in, derive_seed(e.master_seed, n, rep))
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells.push((n, series));
    }
    Ok(gradient_sum_exponent(&model, &config.model.theta, &SeriesBattery { cells })?)
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

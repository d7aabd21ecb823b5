//! Deterministic Monte Carlo engine. Every replication is a pure function of
//! `(config, master_seed, n, rep)`, so reports are identical for any worker
//! count.

mod config;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    ErrorsSection, ExperimentConfig, ExperimentSection, ModelSection, NullSection, RegimeChoice, Resolved,
    SampleSection, TestSection, START_PERTURBATION,
};

use crate::brtest::{AlternativeCalibration, NullCalibration, NullReference};
use crate::density::{estimation_grid, kde, l2_distance_squared, BandwidthReport, EstimateSource};
use crate::error::{Error, Result};
use crate::estimation::{euclidean_distance, fit_cls, lil_scale, no_increase_trend, TrendReport, TREND_LEVEL};
use crate::processes::simulate_series_with_rng;
use crate::stats::{mean, median, normality_diagnostics, variance, NormalityDiagnostics, SpearmanTest};

/// Experiments abort when more than this fraction of replications fail at one `n`.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Terminal median below which the density-gap diagnostic passes without a trend.
pub const DENSITY_GAP_TERMINAL: f64 = 0.1;

/// `splitmix64` output function.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` at sample size `n`.
pub fn derive_seed(master_seed: u64, n: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ n as u64) ^ rep as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    NotConverged,
    FitFailed,
    SimulationFailed,
}

/// One replication. Metrics are absent on failed rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: RowStatus,
    pub t_stat: Option<f64>,
    /// Standardized in the configured regime.
    pub z: Option<f64>,
    /// Null-calibrated upper-tail p-value; the test rejects when it is below the level.
    pub p_value: Option<f64>,
    /// The statistic on the true errors.
    pub t_oracle: Option<f64>,
    pub p_oracle: Option<f64>,
    /// `int (f_hat_n - f_n)^2` on the shared grid.
    pub ise_gap: Option<f64>,
    /// `sum (eps_hat_i - eps_i)^2`
    pub sse_gap: Option<f64>,
    pub theta_err: Option<f64>,
    pub iterations: Option<usize>,
    pub message: Option<String>,
}

impl ReplicationRow {
    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }

    fn failed(n: usize, rep: usize, seed: u64, status: RowStatus, message: String) -> Self {
        ReplicationRow {
            n,
            rep,
            seed,
            status,
            t_stat: None,
            z: None,
            p_value: None,
            t_oracle: None,
            p_oracle: None,
            ise_gap: None,
            sse_gap: None,
            theta_err: None,
            iterations: None,
            message: Some(message),
        }
    }
}

/// Per-`n` summary over the successful replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub h: f64,
    pub replications: usize,
    pub failed: usize,
    /// Fraction of successful replications with `p_value < level`.
    pub rejection_rate: f64,
    pub oracle_rejection_rate: f64,
    /// Centering and variance of the configured regime.
    pub centering: f64,
    pub variance: f64,
    /// Sample variance of `scale (t_stat - centering)`, `scale` as in the regime.
    pub scaled_variance: f64,
    pub z_mean: f64,
    pub z_variance: f64,
    /// Moments and KS distance of `z`; present from 100 successful replications.
    pub normality: Option<NormalityDiagnostics>,
    /// Median of `sum (eps_hat - eps)^2 / log log n`.
    pub median_sse_gap: f64,
    /// Median of `n sqrt(h) int (f_hat_n - f_n)^2`.
    pub median_ise_gap: f64,
    /// Median of `sqrt(n / log log n) |theta_hat - theta|`.
    pub median_lil: f64,
    pub bandwidth: BandwidthReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub package: String,
    pub version: String,
}

impl Fingerprint {
    pub fn current() -> Self {
        Fingerprint { package: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

/// Pass/fail thresholds used by the diagnostics, echoed for auditability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub trend_level: f64,
    pub density_gap_terminal: f64,
    pub max_failure_fraction: f64,
    pub start_perturbation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            trend_level: TREND_LEVEL,
            density_gap_terminal: DENSITY_GAP_TERMINAL,
            max_failure_fraction: MAX_FAILURE_FRACTION,
            start_perturbation: START_PERTURBATION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: ExperimentConfig,
    pub software: Fingerprint,
    pub thresholds: Thresholds,
    pub aggregates: Vec<Aggregate>,
    pub rows: Vec<ReplicationRow>,
}

/// Everything a replication needs at one sample size.
struct Cell {
    n: usize,
    h: f64,
    bandwidth: BandwidthReport,
    reference: NullReference<f64>,
    null: NullCalibration<f64>,
    alternative: Option<AlternativeCalibration<f64>>,
}

impl Cell {
    fn new(r: &Resolved, n: usize, regime: RegimeChoice) -> Result<Self> {
        let (h, bandwidth) = r.schedule.bandwidth(n)?;
        let alternative = match regime {
            RegimeChoice::Null => None,
            RegimeChoice::Alternative => Some(AlternativeCalibration::new(n, h, r.kernel, &r.errors.marginal, &r.f0)?),
        };
        Ok(Cell {
            n,
            h,
            bandwidth,
            reference: NullReference::new(r.kernel, h, r.f0)?,
            null: NullCalibration::new(n, h, r.kernel, &r.f0)?,
            alternative,
        })
    }

    fn calibration(&self) -> (f64, f64, f64) {
        match &self.alternative {
            None => (self.null.centering, self.null.variance, self.n as f64 * self.h.sqrt()),
            Some(a) => (a.centering, a.variance, (self.n as f64).sqrt()),
        }
    }
}

fn replicate(r: &Resolved, cell: &Cell, burn_in: usize, rep: usize, seed: u64) -> ReplicationRow {
    let n = cell.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = match simulate_series_with_rng(&r.model, &r.theta, &r.errors, n, burn_in, seed, &mut rng) {
        Ok(s) => s,
        Err(e) => return ReplicationRow::failed(n, rep, seed, RowStatus::SimulationFailed, e.to_string()),
    };
    let theta0: Vec<f64> =
        r.theta.iter().map(|t| t + rng.random_range(-START_PERTURBATION..START_PERTURBATION)).collect();
    let fit = match fit_cls(&r.model, &series, &theta0) {
        Ok(f) if f.converged => f,
        Ok(f) => {
            let msg = format!("no convergence after {} iterations", f.iterations);
            return ReplicationRow::failed(n, rep, seed, RowStatus::NotConverged, msg);
        }
        Err(e) => return ReplicationRow::failed(n, rep, seed, RowStatus::FitFailed, e.to_string()),
    };
    match measure(r, cell, &series.errors_true, &fit.residuals) {
        Ok(m) => ReplicationRow {
            n,
            rep,
            seed,
            status: RowStatus::Ok,
            t_stat: Some(m.t_stat),
            z: Some(m.z),
            p_value: Some(m.p_value),
            t_oracle: Some(m.t_oracle),
            p_oracle: Some(m.p_oracle),
            ise_gap: Some(m.ise_gap),
            sse_gap: Some(fit.residuals.iter().zip(&series.errors_true).map(|(a, b)| (a - b).powi(2)).sum()),
            theta_err: Some(euclidean_distance(&fit.theta_hat, &r.theta)),
            iterations: Some(fit.iterations),
            message: None,
        },
        Err(e) => ReplicationRow::failed(n, rep, seed, RowStatus::FitFailed, e.to_string()),
    }
}

struct Measures {
    t_stat: f64,
    z: f64,
    p_value: f64,
    t_oracle: f64,
    p_oracle: f64,
    ise_gap: f64,
}

fn measure(r: &Resolved, cell: &Cell, errors: &[f64], resid: &[f64]) -> Result<Measures> {
    let grid = estimation_grid(&[resid, errors], r.kernel, cell.h)?;
    let fhat = kde(resid, r.kernel, cell.h, grid.clone(), EstimateSource::Residuals)?;
    let f_n = kde(errors, r.kernel, cell.h, grid.clone(), EstimateSource::TrueErrors)?;
    let t_stat = cell.reference.statistic(&fhat)?;
    let t_oracle = cell.reference.statistic(&f_n)?;
    let null = cell.null.standardize(t_stat);
    let z = match &cell.alternative {
        None => null.z,
        Some(a) => a.standardize(t_stat).z,
    };
    Ok(Measures {
        t_stat,
        z,
        p_value: null.p_value,
        t_oracle,
        p_oracle: cell.null.standardize(t_oracle).p_value,
        ise_gap: l2_distance_squared(&fhat, &f_n, &grid)?,
    })
}

/// Runs every `(n, rep)` of the configured grid on a pool of `workers` threads.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<MonteCarloReport> {
    let r = config.validate_experiment()?;
    let e = &config.experiment;
    let cells: Vec<Cell> = e.n_grid.iter().map(|&n| Cell::new(&r, n, e.regime)).collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..e.replications).map(move |rep| (c, rep))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|err| Error::param(format!("cannot start worker pool: {err}")))?;
    let rows: Vec<ReplicationRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, rep)| {
                let cell = &cells[c];
                replicate(&r, cell, e.burn_in, rep, derive_seed(e.master_seed, cell.n, rep))
            })
            .collect()
    });

    let mut aggregates = Vec::with_capacity(cells.len());
    for cell in &cells {
        let cell_rows: Vec<&ReplicationRow> = rows.iter().filter(|row| row.n == cell.n).collect();
        aggregates.push(aggregate(cell, &cell_rows, r.level)?);
    }
    Ok(MonteCarloReport {
        config: config.clone(),
        software: Fingerprint::current(),
        thresholds: Thresholds::default(),
        aggregates,
        rows,
    })
}

fn aggregate(cell: &Cell, rows: &[&ReplicationRow], level: f64) -> Result<Aggregate> {
    let total = rows.len();
    let ok: Vec<&ReplicationRow> = rows.iter().copied().filter(|r| r.is_ok()).collect();
    let failed = total - ok.len();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { n: cell.n, failed, total });
    }
    if ok.is_empty() {
        return Err(Error::TooManyFailures { n: cell.n, failed, total });
    }
    let take = |f: fn(&ReplicationRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
    let p = take(|r| r.p_value);
    let p_oracle = take(|r| r.p_oracle);
    let z = take(|r| r.z);
    let (centering, var, scale) = cell.calibration();
    let scaled: Vec<f64> = take(|r| r.t_stat).iter().map(|t| scale * (t - centering)).collect();
    let loglog = (cell.n as f64).ln().ln();
    let sqrt_h = cell.h.sqrt();
    let n = cell.n as f64;
    let lil = lil_scale(cell.n);
    Ok(Aggregate {
        n: cell.n,
        h: cell.h,
        replications: total,
        failed,
        rejection_rate: rejection_rate(&p, level),
        oracle_rejection_rate: rejection_rate(&p_oracle, level),
        centering,
        variance: var,
        scaled_variance: if scaled.len() > 1 { variance(&scaled) } else { 0.0 },
        z_mean: mean(&z),
        z_variance: if z.len() > 1 { variance(&z) } else { 0.0 },
        normality: normality_diagnostics(&z).ok(),
        median_sse_gap: median(&take(|r| r.sse_gap).iter().map(|v| v / loglog).collect::<Vec<_>>()),
        median_ise_gap: median(&take(|r| r.ise_gap).iter().map(|v| n * sqrt_h * v).collect::<Vec<_>>()),
        median_lil: median(&take(|r| r.theta_err).iter().map(|v| lil * v).collect::<Vec<_>>()),
        bandwidth: cell.bandwidth.clone(),
    })
}

/// `#{p < level} / len`; zero for an empty slice.
pub fn rejection_rate(p_values: &[f64], level: f64) -> f64 {
    if p_values.is_empty() {
        return 0.0;
    }
    p_values.iter().filter(|p| **p < level).count() as f64 / p_values.len() as f64
}

/// Rejection rate per `n` at `level`, recounted from the rows.
pub fn empirical_size_power(report: &MonteCarloReport, level: f64) -> Vec<(usize, f64)> {
    report
        .aggregates
        .iter()
        .map(|a| {
            let p: Vec<f64> =
                report.rows.iter().filter(|r| r.n == a.n && r.is_ok()).filter_map(|r| r.p_value).collect();
            (a.n, rejection_rate(&p, level))
        })
        .collect()
}

/// Density-gap trend: passes on a significant decrease or a small terminal median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub n_grid: Vec<usize>,
    pub medians: Vec<f64>,
    pub spearman: SpearmanTest,
    pub strictly_decreasing: bool,
    pub terminal: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    /// `sum (eps_hat - eps)^2 / log log n`: no increasing trend.
    pub residual_gap_trend: TrendReport,
    /// `n sqrt(h) int (f_hat_n - f_n)^2`: decreasing.
    pub density_gap_trend: DecreaseReport,
    /// `sqrt(n / log log n) |theta_hat - theta|`: no increasing trend.
    pub lil_trend: TrendReport,
}

pub fn convergence_diagnostics(report: &MonteCarloReport) -> Result<ConvergenceDiagnostics> {
    let sizes: Vec<usize> = report.aggregates.iter().map(|a| a.n).collect();
    if sizes.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "convergence diagnostics need at least three sample sizes, got {}",
            sizes.len()
        )));
    }
    let h: Vec<f64> = report.aggregates.iter().map(|a| a.h).collect();
    let cells = |f: &dyn Fn(&ReplicationRow, usize, f64) -> Option<f64>| -> Vec<(usize, Vec<f64>)> {
        sizes
            .iter()
            .zip(&h)
            .map(|(&n, &h)| {
                (n, report.rows.iter().filter(|r| r.n == n && r.is_ok()).filter_map(|r| f(r, n, h)).collect())
            })
            .collect()
    };
    let loglog = |n: usize| (n as f64).ln().ln();
    let residual_gap_trend = no_increase_trend(&cells(&|r, n, _| r.sse_gap.map(|v| v / loglog(n))))?;
    let lil_trend = no_increase_trend(&cells(&|r, n, _| r.theta_err.map(|v| v * lil_scale(n))))?;
    let gap = no_increase_trend(&cells(&|r, n, h| r.ise_gap.map(|v| n as f64 * h.sqrt() * v)))?;
    let terminal = *gap.medians.last().expect("three or more sizes");
    let strictly_decreasing = gap.medians.windows(2).all(|w| w[1] < w[0]);
    let passed = gap.spearman.p_decreasing < TREND_LEVEL || terminal < DENSITY_GAP_TERMINAL;
    Ok(ConvergenceDiagnostics {
        residual_gap_trend,
        density_gap_trend: DecreaseReport {
            n_grid: gap.n_grid,
            medians: gap.medians,
            spearman: gap.spearman,
            strictly_decreasing,
            terminal,
            passed,
        },
        lil_trend,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl MonteCarloReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "rep",
            "seed",
            "t_stat",
            "z",
            "p",
            "theta_err",
            "t_oracle",
            "p_oracle",
            "ise_gap",
            "sse_gap",
            "flags",
        ])?;
        for r in &self.rows {
            let flags = serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string();
            w.write_record([
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                fmt_opt(r.t_stat),
                fmt_opt(r.z),
                fmt_opt(r.p_value),
                fmt_opt(r.theta_err),
                fmt_opt(r.t_oracle),
                fmt_opt(r.p_oracle),
                fmt_opt(r.ise_gap),
                fmt_opt(r.sse_gap),
                flags,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "h",
            "replications",
            "failed",
            "rejection_rate",
            "oracle_rejection_rate",
            "centering",
            "variance",
            "scaled_variance",
            "z_mean",
            "z_variance",
            "z_skewness",
            "z_excess_kurtosis",
            "z_ks_distance",
            "median_sse_gap",
            "median_ise_gap",
            "median_lil",
        ])?;
        for a in &self.aggregates {
            let norm = a.normality.as_ref();
            w.write_record([
                a.n.to_string(),
                format!("{:e}", a.h),
                a.replications.to_string(),
                a.failed.to_string(),
                format!("{:e}", a.rejection_rate),
                format!("{:e}", a.oracle_rejection_rate),
                format!("{:e}", a.centering),
                format!("{:e}", a.variance),
                format!("{:e}", a.scaled_variance),
                format!("{:e}", a.z_mean),
                format!("{:e}", a.z_variance),
                fmt_opt(norm.map(|d| d.skewness)),
                fmt_opt(norm.map(|d| d.excess_kurtosis)),
                fmt_opt(norm.map(|d| d.ks_distance)),
                format!("{:e}", a.median_sse_gap),
                format!("{:e}", a.median_ise_gap),
                format!("{:e}", a.median_lil),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `replications.csv` and `aggregates.csv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        self.write_rows_csv(std::fs::File::create(dir.join("replications.csv"))?)?;
        self.write_aggregates_csv(std::fs::File::create(dir.join("aggregates.csv"))?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(overrides: &[&str]) -> ExperimentConfig {
        let base = r#"
[model]
name = "linear_ar"
theta = [0.5]
[errors]
marginal = "std_normal"
[experiment]
n_grid = [200, 400, 800]
replications = 20
master_seed = 7
"#;
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::with_overrides(base, &o).unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, 500, 3), derive_seed(1, 500, 3));
        let mut seen: Vec<u64> = (0..100).flat_map(|r| [derive_seed(1, 500, r), derive_seed(1, 1000, r)]).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 200);
        assert_ne!(derive_seed(1, 500, 0), derive_seed(2, 500, 0));
    }

    #[test]
    fn rejection_rate_counts_exactly() {
        assert_eq!(rejection_rate(&[1.0; 10], 0.05), 0.0);
        assert_eq!(rejection_rate(&[0.0; 10], 0.05), 1.0);
        assert_eq!(rejection_rate(&[0.01, 0.2, 0.049, 0.05], 0.05), 0.5);
    }

    #[test]
    fn report_is_independent_of_workers() {
        let c = small(&[]);
        let one = run_experiment(&c, 1).unwrap();
        let four = run_experiment(&c, 4).unwrap();
        assert_eq!(one.to_json().unwrap(), four.to_json().unwrap());
        assert_eq!(one.rows.len(), 60);
        let recount = empirical_size_power(&one, c.test.level);
        for (a, (n, rate)) in one.aggregates.iter().zip(recount) {
            assert_eq!(a.n, n);
            assert_eq!(a.rejection_rate, rate);
        }
        assert!(one.aggregates.iter().all(|a| a.normality.is_none()));
    }

    #[test]
    fn diagnostics_need_three_sizes() {
        let c = small(&["experiment.n_grid=[200, 400]", "experiment.replications=5"]);
        let report = run_experiment(&c, 2).unwrap();
        assert!(matches!(convergence_diagnostics(&report), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn exact_parameters_give_zero_residual_gap() {
        let c = small(&["experiment.replications=5"]);
        let mut report = run_experiment(&c, 2).unwrap();
        for row in &mut report.rows {
            row.sse_gap = Some(0.0);
        }
        let d = convergence_diagnostics(&report).unwrap();
        assert!(d.residual_gap_trend.medians.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn csv_outputs_have_one_line_per_entry() {
        let c = small(&["experiment.replications=3"]);
        let report = run_experiment(&c, 2).unwrap();
        let mut rows = Vec::new();
        report.write_rows_csv(&mut rows).unwrap();
        assert_eq!(String::from_utf8(rows).unwrap().lines().count(), 10);
        let mut agg = Vec::new();
        report.write_aggregates_csv(&mut agg).unwrap();
        assert_eq!(String::from_utf8(agg).unwrap().lines().count(), 4);
    }
}

//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Every criterion runs to completion and reports before the final assertion,
//! so a red criterion does not hide the others. Run with `--nocapture` to see
//! the lines.

use std::path::{Path, PathBuf};

use nargof::brtest::{decomposition, statistic_exact, statistic_quadrature, Decomposition};
use nargof::density::{estimation_grid, kde, EstimateSource};
use nargof::kernels::{KernelSpec, CONSTANTS_QUADRATURE_STEP};
use nargof::montecarlo::{convergence_diagnostics, run_experiment, Aggregate, MonteCarloReport};
use nargof::processes::{simulate_errors, DensityFn, ErrorProcessSpec};
use nargof::stats::{mean, variance};
use nargof::ExperimentConfig;
use num_bigint::BigInt;
use num_rational::BigRational;

const WORKERS: usize = 4;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn config(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(&config_path(name), &overrides).expect("config loads")
}

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn only_aggregate(report: &MonteCarloReport) -> &Aggregate {
    assert_eq!(report.aggregates.len(), 1);
    &report.aggregates[0]
}

fn kernel_constants() -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for k in [KernelSpec::Epanechnikov, KernelSpec::Quartic, KernelSpec::Triangular] {
        let closed = k.constants::<f64>();
        let quad = k.quadrature_constants(CONSTANTS_QUADRATURE_STEP);
        let gap = (closed.r_k - quad.r_k).abs();
        pass &= gap < 1e-8;
        detail.push(format!("{} |dr_k|={gap:.1e}", k.name()));
    }
    let exact = KernelSpec::Epanechnikov.exact_constants();
    pass &= exact.r_k == ratio(3, 5) && exact.sigma2_k == ratio(1, 5);
    detail.push(format!("epanechnikov r_k={} sigma2_k={}", exact.r_k, exact.sigma2_k));
    Verdict { id: 1, name: "kernel constants", pass, detail: detail.join("; ") }
}

fn statistic_oracle() -> Verdict {
    let k = KernelSpec::Epanechnikov;
    let phi = DensityFn::StdNormal;
    let mut worst: f64 = 0.0;
    for n in [100usize, 500, 2000] {
        let h = (n as f64).powf(-0.2);
        for seed in 0..20 {
            let x = simulate_errors(&ErrorProcessSpec::iid(phi), n, 7_000 + seed).unwrap();
            let grid = estimation_grid(&[&x], k, h).unwrap();
            let fhat = kde(&x, k, h, grid, EstimateSource::TrueErrors).unwrap();
            let quad = statistic_quadrature(&fhat, k, h, &phi).unwrap();
            let exact = statistic_exact(&x, k, h, &phi).unwrap();
            worst = worst.max((quad - exact).abs() / exact.abs());
        }
    }
    Verdict {
        id: 2,
        name: "statistic quadrature vs exact",
        pass: worst < 1e-3,
        detail: format!("worst relative difference {worst:.2e} (< 1e-3)"),
    }
}

/// Bands shared by the two null criteria.
fn null_bands(a: &Aggregate) -> (bool, String) {
    let Some(norm) = a.normality else {
        return (false, "too few successful replications for normality diagnostics".into());
    };
    let pass = (0.01..=0.12).contains(&a.rejection_rate)
        && (-0.4..=0.4).contains(&norm.mean)
        && (0.5..=1.7).contains(&norm.variance)
        && norm.ks_distance < 0.15;
    let detail = format!(
        "rate {:.3} in [0.01, 0.12]; z mean {:.3} in [-0.4, 0.4]; z var {:.3} in [0.5, 1.7]; KS {:.3} < 0.15; failed {}",
        a.rejection_rate, norm.mean, norm.variance, norm.ks_distance, a.failed
    );
    (pass, detail)
}

fn null_calibration(report: &MonteCarloReport) -> Verdict {
    let (pass, detail) = null_bands(only_aggregate(report));
    Verdict { id: 3, name: "null calibration", pass, detail }
}

fn mixing_invariance(iid: &MonteCarloReport) -> Verdict {
    let name = "mixing invariance";
    let mixing = match run_experiment(&config("null_mixing.toml", &[]), WORKERS) {
        Ok(r) => r,
        Err(e) => return Verdict { id: 4, name, pass: false, detail: format!("run failed: {e}") },
    };
    let a = only_aggregate(&mixing);
    let (bands, detail) = null_bands(a);
    let shift = (a.rejection_rate - only_aggregate(iid).rejection_rate).abs();
    Verdict {
        id: 4,
        name,
        pass: bands && shift < 0.08,
        detail: format!("{detail}; |rate shift| {shift:.3} < 0.08; oracle rate {:.3}", a.oracle_rejection_rate),
    }
}

fn power(null_rate: f64) -> Verdict {
    let name = "power";
    let report = match run_experiment(&config("power_laplace.toml", &[]), WORKERS) {
        Ok(r) => r,
        Err(e) => return Verdict { id: 5, name, pass: false, detail: format!("run failed: {e}") },
    };
    let rates: Vec<f64> = report.aggregates.iter().map(|a| a.rejection_rate).collect();
    let increasing = rates.windows(2).all(|w| w[1] > w[0]);
    let terminal = *rates.last().unwrap();
    Verdict {
        id: 5,
        name,
        pass: increasing && terminal >= 3.0 * null_rate,
        detail: format!(
            "rates {rates:?} strictly increasing: {increasing}; rate at n=2000 {terminal:.3} >= 3 x {null_rate:.3}"
        ),
    }
}

fn alternative_clt() -> Verdict {
    let name = "fixed-alternative CLT";
    let cfg = config("power_laplace.toml", &["experiment.n_grid=[2000]", "experiment.replications=500"]);
    let report = match run_experiment(&cfg, WORKERS) {
        Ok(r) => r,
        Err(e) => return Verdict { id: 6, name, pass: false, detail: format!("run failed: {e}") },
    };
    let a = only_aggregate(&report);
    let rel = a.scaled_variance / a.variance - 1.0;
    let ks = a.normality.map_or(f64::INFINITY, |d| d.ks_distance);
    Verdict {
        id: 6,
        name,
        pass: rel.abs() <= 0.4 && ks < 0.2,
        detail: format!(
            "scaled variance {:.4} vs 4 Var {:.4} (relative {rel:+.3}, within 0.4); KS {ks:.3} < 0.2",
            a.scaled_variance, a.variance
        ),
    }
}

fn convergence() -> Verdict {
    let name = "convergence diagnostics";
    let report = match run_experiment(&config("expar_diagnostics.toml", &[]), WORKERS) {
        Ok(r) => r,
        Err(e) => return Verdict { id: 7, name, pass: false, detail: format!("run failed: {e}") },
    };
    let d = convergence_diagnostics(&report).unwrap();
    let gap = &d.density_gap_trend;
    let gap_ok = gap.strictly_decreasing && gap.terminal < 0.1;
    Verdict {
        id: 7,
        name,
        pass: d.residual_gap_trend.passed && gap_ok && d.lil_trend.passed,
        detail: format!(
            "(a) sse gap medians {:?} no rise: {}; (b) density gap medians {:?} decreasing with terminal < 0.1: {gap_ok}; (c) lil medians {:?} no rise: {}",
            d.residual_gap_trend.medians, d.residual_gap_trend.passed, gap.medians, d.lil_trend.medians, d.lil_trend.passed
        ),
    }
}

fn decomposition_identity() -> Verdict {
    let k = KernelSpec::Epanechnikov;
    let phi = DensityFn::StdNormal;
    let lap = DensityFn::LaplaceUnitVar;
    let n = 200;
    let h = (n as f64).powf(-0.2);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let x = simulate_errors(&ErrorProcessSpec::iid(lap), n, 8_000 + seed).unwrap();
        let rep = decomposition(&x, k, h, &lap, &phi).unwrap();
        let direct = statistic_exact(&x, k, h, &phi).unwrap();
        worst = worst.max((rep.sum() - direct).abs());
    }
    let d = Decomposition::new(k, h, &lap, &phi).unwrap();
    let u: Vec<f64> = (0..200)
        .map(|seed| {
            let x = simulate_errors(&ErrorProcessSpec::iid(lap), n, 9_000 + seed).unwrap();
            d.evaluate(&x).unwrap().u_n
        })
        .collect();
    let se = (variance(&u) / u.len() as f64).sqrt();
    let m = mean(&u);
    Verdict {
        id: 8,
        name: "decomposition identity",
        pass: worst < 1e-8 && m.abs() < 3.0 * se,
        detail: format!("worst |sum - T_n| {worst:.1e} (< 1e-8); U_n mean {m:.2e} within 3 x SE {se:.2e}"),
    }
}

fn determinism() -> Verdict {
    let cfg = config("null_iid.toml", &[]);
    let files = ["report.json", "replications.csv", "aggregates.csv"];
    let mut outputs = Vec::new();
    for workers in [1, 4, 8] {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, workers).unwrap().write_files(dir.path()).unwrap();
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        outputs.push(bytes);
    }
    let pass = outputs.windows(2).all(|w| w[0] == w[1]);
    Verdict {
        id: 9,
        name: "determinism",
        pass,
        detail: format!("{} byte-identical across workers 1, 4, 8", files.join(", ")),
    }
}

#[test]
fn acceptance() {
    let mut verdicts = vec![kernel_constants(), statistic_oracle()];
    let null_iid = run_experiment(&config("null_iid.toml", &[]), WORKERS).expect("null run");
    verdicts.push(null_calibration(&null_iid));
    verdicts.push(mixing_invariance(&null_iid));
    verdicts.push(power(only_aggregate(&null_iid).rejection_rate));
    verdicts.push(alternative_clt());
    verdicts.push(convergence());
    verdicts.push(decomposition_identity());
    verdicts.push(determinism());

    for v in &verdicts {
        println!("{} criterion {} ({}): {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

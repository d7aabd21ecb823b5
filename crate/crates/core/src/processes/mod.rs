//! Stationary alpha-mixing error streams and autoregressive sample paths.
//!
//! Errors come from a Gaussian copula: a latent stationary AR(1) chain
//! `e_i = rho e_{i-1} + sqrt(1 - rho^2) z_i` with `e_0 ~ N(0, 1)` is mapped
//! through `F^{-1}(Phi(e_i))`. The marginal is exactly `F` and the stream
//! inherits the geometric mixing rate of the latent chain.

mod marginal;
mod model;

pub use marginal::{normal_cdf, normal_pdf, normal_quantile, normal_sf, DensityFn};
pub use model::{AutoregressiveModel, ModelSpec, SampleSeries};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum discarded prefix of a simulated series.
pub const MIN_BURN_IN: usize = 500;

/// Simulated values beyond this magnitude mean the recursion escaped.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorProcessSpec {
    pub marginal: DensityFn,
    /// Autocorrelation of the latent Gaussian chain; zero gives i.i.d. errors.
    pub rho: f64,
}

impl ErrorProcessSpec {
    pub fn new(marginal: DensityFn, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::param(format!("rho must lie in [0, 1), got {rho}")));
        }
        Ok(ErrorProcessSpec { marginal, rho })
    }

    pub fn iid(marginal: DensityFn) -> Self {
        ErrorProcessSpec { marginal, rho: 0.0 }
    }

    /// Upper bound `|rho|^tau / 4` on the strong-mixing coefficient at lag `tau`.
    pub fn mixing_bound(&self, tau: u32) -> f64 {
        self.rho.abs().powi(tau as i32) / 4.0
    }

    /// `f(t)`
    pub fn marginal_density_eval(&self, t: f64) -> f64 {
        self.marginal.pdf(t)
    }

    /// Draws `n` consecutive values of the stationary stream.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let innovation_sd = (1.0 - self.rho * self.rho).sqrt();
        let mut latent: f64 = rng.sample(StandardNormal);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let z: f64 = rng.sample(StandardNormal);
                latent = self.rho * latent + innovation_sd * z;
            }
            out.push(self.marginal.from_standard_normal(latent));
        }
        out
    }
}

/// `n` values of the error stream, deterministic in `seed`.
pub fn simulate_errors(spec: &ErrorProcessSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = ErrorProcessSpec::new(spec.marginal, spec.rho)?;
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spec.sample(n, &mut rng))
}

/// Simulates `X_i = r_theta(lags) + eps_i` from zero initial lags and keeps
/// the last `n + p` values.
pub fn simulate_series(
    model: &ModelSpec,
    theta: &[f64],
    errors: &ErrorProcessSpec,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleSeries<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_series_with_rng(model, theta, errors, n, burn_in, seed, &mut rng)
}

/// [`simulate_series`] drawing from a caller-owned generator; `seed` is only recorded.
pub fn simulate_series_with_rng<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &[f64],
    errors: &ErrorProcessSpec,
    n: usize,
    burn_in: usize,
    seed: u64,
    rng: &mut R,
) -> Result<SampleSeries<f64>> {
    AutoregressiveModel::<f64>::check_admissible(model, theta)?;
    let errors = ErrorProcessSpec::new(errors.marginal, errors.rho)?;
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    if burn_in < MIN_BURN_IN {
        return Err(Error::param(format!("burn_in must be at least {MIN_BURN_IN}, got {burn_in}")));
    }
    let p = AutoregressiveModel::<f64>::order(model);
    let total = burn_in + n;
    let eps = errors.sample(total, rng);
    let mut path = vec![0.0; p + total];
    for s in 0..total {
        let x = model.mean_function(theta, &path[s..s + p]) + eps[s];
        if !(x.abs() <= OVERFLOW_LIMIT) {
            return Err(Error::Overflow(format!("|X| exceeded {OVERFLOW_LIMIT:e} at step {s}")));
        }
        path[s + p] = x;
    }
    Ok(SampleSeries {
        values: path[burn_in..].to_vec(),
        order: p,
        theta_true: theta.to_vec(),
        errors_true: eps[burn_in..].to_vec(),
        seed,
        burn_in,
    })
}

pub type WindowFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// A bounded functional of a window of the error stream, `|g| <= bound`.
pub struct BoundedFunctional<'a> {
    pub bound: f64,
    pub func: WindowFn<'a>,
}

impl<'a> BoundedFunctional<'a> {
    pub fn new(bound: f64, func: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        BoundedFunctional { bound, func: Box::new(func) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CovarianceCheck {
    pub tau: u32,
    pub covariance: f64,
    pub standard_error: f64,
    /// `4 C1 C2 alpha(tau)`
    pub bound: f64,
    pub passed: bool,
}

/// Monte Carlo check of `|E g1 g2 - E g1 E g2| <= 4 C1 C2 alpha(tau)` where
/// `g1` sees `eps_1..eps_w` and `g2` sees `eps_{w+tau}..eps_{2w+tau-1}`.
pub fn covariance_inequality_check(
    spec: &ErrorProcessSpec,
    tau: u32,
    window: usize,
    g1: &BoundedFunctional<'_>,
    g2: &BoundedFunctional<'_>,
    reps: usize,
    seed: u64,
) -> Result<CovarianceCheck> {
    for g in [g1, g2] {
        if !(g.bound.is_finite() && g.bound > 0.0) {
            return Err(Error::param(format!("functional bound must be finite and positive, got {}", g.bound)));
        }
    }
    if tau == 0 || window == 0 || reps < 2 {
        return Err(Error::param("tau, window must be positive and reps at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 2 * window + tau as usize - 1;
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    for _ in 0..reps {
        let stream = spec.sample(len, &mut rng);
        let va = (g1.func)(&stream[..window]);
        let vb = (g2.func)(&stream[window + tau as usize - 1..]);
        if va.abs() > g1.bound || vb.abs() > g2.bound {
            return Err(Error::param("functional exceeded its declared bound"));
        }
        a.push(va);
        b.push(vb);
    }
    let m = reps as f64;
    let mean_a = a.iter().sum::<f64>() / m;
    let mean_b = b.iter().sum::<f64>() / m;
    let prods: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - mean_a) * (y - mean_b)).collect();
    let covariance = prods.iter().sum::<f64>() / m;
    let var = prods.iter().map(|p| (p - covariance).powi(2)).sum::<f64>() / (m - 1.0);
    let standard_error = (var / m).sqrt();
    let bound = 4.0 * g1.bound * g2.bound * spec.mixing_bound(tau);
    Ok(CovarianceCheck {
        tau,
        covariance,
        standard_error,
        bound,
        passed: covariance.abs() - 3.0 * standard_error <= bound,
    })
}

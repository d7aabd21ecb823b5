//! Kernel density estimates of the error density, bandwidth schedules and
//! L2 distances.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_bandwidth, KernelSpec};
use crate::processes::DensityFn;
use crate::quadrature::trapezoid_nonuniform;
use crate::scalar::Scalar;

/// Estimation grids never extend past `[-DOMAIN_LIMIT, DOMAIN_LIMIT]`.
pub const DOMAIN_LIMIT: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    Residuals,
    TrueErrors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate<T> {
    pub grid: Vec<T>,
    pub values: Vec<T>,
    pub bandwidth: T,
    pub n: usize,
    pub source: EstimateSource,
    pub kernel: KernelSpec,
}

impl<T: Scalar> DensityEstimate<T> {
    pub fn integral(&self) -> T {
        trapezoid_nonuniform(&self.grid, &self.values)
    }

    /// Two-column `grid,value` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid", "value"])?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid spacing used for a bandwidth: `min(h / 10, 0.02)`.
pub fn grid_step<T: Scalar>(h: T) -> T {
    (h / T::lit(10.0)).min(T::lit(0.02))
}

/// Integer lattice index range `[lo, hi]` covering `[a, b]` at `step`.
pub(crate) fn lattice_range<T: Scalar>(a: T, b: T, step: T) -> (i64, i64) {
    let lo = (a / step).floor().to_i64().expect("finite grid bound");
    let hi = (b / step).ceil().to_i64().expect("finite grid bound");
    (lo, hi)
}

#[inline]
pub(crate) fn lattice_point<T: Scalar>(k: i64, step: T) -> T {
    T::from_i64(k).expect("lattice index") * step
}

/// Grid on the lattice `k * grid_step(h)` spanning the hull of all samples
/// padded by `h`, clipped to the domain limit.
pub fn estimation_grid<T: Scalar>(samples: &[&[T]], kernel: KernelSpec, h: T) -> Result<Vec<T>> {
    check_bandwidth(h)?;
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for s in samples {
        for &x in s.iter() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InsufficientData("cannot build a grid from an empty sample".into()));
    }
    let pad = h * T::lit(kernel.support_halfwidth());
    let limit = T::lit(DOMAIN_LIMIT);
    let a = (lo - pad).max(-limit);
    let b = (hi + pad).min(limit);
    let step = grid_step(h);
    let (k0, k1) = lattice_range(a, b.max(a), step);
    Ok((k0..=k1).map(|k| lattice_point(k, step)).collect())
}

/// `f_hat(t) = (1/n) sum_i K_h(t - x_i)` at every grid point, summed exactly.
pub fn kde<T: Scalar>(
    sample: &[T],
    kernel: KernelSpec,
    h: T,
    grid: Vec<T>,
    source: EstimateSource,
) -> Result<DensityEstimate<T>> {
    check_bandwidth(h)?;
    if sample.is_empty() {
        return Err(Error::InsufficientData("kernel density estimate of an empty sample".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::param("grid must be strictly increasing"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let reach = h * T::lit(kernel.support_halfwidth());
    let norm = T::one() / (T::from_usize_lossy(sample.len()) * h);
    let values = grid
        .iter()
        .map(|&t| {
            let start = sorted.partition_point(|&x| x < t - reach);
            let end = sorted.partition_point(|&x| x <= t + reach);
            sorted[start..end].iter().map(|&x| kernel.eval((t - x) / h)).sum::<T>() * norm
        })
        .collect();
    Ok(DensityEstimate { grid, values, bandwidth: h, n: sample.len(), source, kernel })
}

/// A density argument for [`l2_distance_squared`].
#[derive(Clone, Copy, Debug)]
pub enum DensityArg<'a, T> {
    Estimate(&'a DensityEstimate<T>),
    Exact(&'a DensityFn),
}

impl<'a, T> From<&'a DensityEstimate<T>> for DensityArg<'a, T> {
    fn from(e: &'a DensityEstimate<T>) -> Self {
        DensityArg::Estimate(e)
    }
}

impl<'a, T> From<&'a DensityFn> for DensityArg<'a, T> {
    fn from(f: &'a DensityFn) -> Self {
        DensityArg::Exact(f)
    }
}

impl<T: Scalar> DensityArg<'_, T> {
    fn on_grid(&self, grid: &[T]) -> Result<Vec<T>> {
        match self {
            DensityArg::Estimate(e) => {
                if e.grid.as_slice() != grid {
                    return Err(Error::GridMismatch("estimate grid differs from the integration grid".into()));
                }
                Ok(e.values.clone())
            }
            DensityArg::Exact(f) => Ok(grid.iter().map(|&t| f.pdf(t)).collect()),
        }
    }
}

/// `int (a - b)^2` by the trapezoid rule on `grid`.
pub fn l2_distance_squared<'a, 'b, T: Scalar + 'a + 'b>(
    a: impl Into<DensityArg<'a, T>>,
    b: impl Into<DensityArg<'b, T>>,
    grid: &[T],
) -> Result<T> {
    let va = a.into().on_grid(grid)?;
    let vb = b.into().on_grid(grid)?;
    let sq: Vec<T> = va.iter().zip(&vb).map(|(x, y)| (*x - *y) * (*x - *y)).collect();
    Ok(trapezoid_nonuniform(grid, &sq))
}

/// `h(n) = c n^(-gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandwidthSchedule {
    pub c: f64,
    pub gamma: f64,
    /// Growth exponent of the gradient sums, `1/2` for the built-in models.
    pub working_alpha: f64,
}

impl Default for BandwidthSchedule {
    fn default() -> Self {
        BandwidthSchedule { c: 1.0, gamma: 0.2, working_alpha: 0.5 }
    }
}

/// One asymptotic rate condition, judged from exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCondition {
    pub name: String,
    pub requirement: String,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub n: usize,
    pub h: f64,
    pub conditions: Vec<RateCondition>,
    pub warnings: Vec<String>,
}

impl BandwidthSchedule {
    /// Rejects schedules that cannot shrink the bandwidth at a usable rate.
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("bandwidth constant c must be positive, got {}", self.c)));
        }
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Config(format!(
                "bandwidth exponent gamma = {} violates h -> 0 with n h^2 -> infinity (requires 0 < gamma < 1/2)",
                self.gamma
            )));
        }
        if !(self.working_alpha > 0.0 && self.working_alpha < 1.0) {
            return Err(Error::Config(format!("working_alpha must lie in (0, 1), got {}", self.working_alpha)));
        }
        Ok(())
    }

    pub fn conditions(&self) -> Vec<RateCondition> {
        vec![
            RateCondition {
                name: "vanishing_bandwidth".into(),
                requirement: "h -> 0 and n h^2 -> infinity: 0 < gamma < 1/2".into(),
                satisfied: self.gamma > 0.0 && self.gamma < 0.5,
            },
            RateCondition {
                name: "estimation_effect".into(),
                requirement: "n^(2(alpha-1)) h^-2 loglog n -> 0: gamma < 1 - alpha".into(),
                satisfied: self.gamma < 1.0 - self.working_alpha,
            },
            RateCondition {
                name: "fourth_power_rate".into(),
                requirement: "n^-1 h^-4 (loglog n)^2 -> 0: gamma < 1/4".into(),
                satisfied: self.gamma < 0.25,
            },
        ]
    }

    pub fn bandwidth(&self, n: usize) -> Result<(f64, BandwidthReport)> {
        self.validate()?;
        if n < 2 {
            return Err(Error::param(format!("bandwidth needs n >= 2, got {n}")));
        }
        let h = self.c * (n as f64).powf(-self.gamma);
        let conditions = self.conditions();
        let warnings = conditions
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| format!("{} violated ({})", c.name, c.requirement))
            .collect();
        Ok((h, BandwidthReport { n, h, conditions, warnings }))
    }
}

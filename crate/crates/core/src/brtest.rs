//! The integrated squared deviation statistic
//! `T = int (f_hat_n(t) - (K_h * f0)(t))^2 dt`, its grid-free evaluation, the
//! U-statistic decomposition on true errors, and the two standardizations.
//!
//! Under `H0: f = f0`,
//! `n sqrt(h) (T - r_k / (n h))` is asymptotically `N(0, 2 int f0^2 r_kk)`;
//! under a fixed alternative
//! `sqrt(n) (T - int (K_h * (f - f0))^2)` is asymptotically
//! `N(0, 4 Var[(f - f0)(eps)])`.

use serde::{Deserialize, Serialize};

use crate::density::{grid_step, lattice_point, lattice_range, DensityEstimate, EstimateSource, DOMAIN_LIMIT};
use crate::error::{Error, Result};
use crate::kernels::{check_bandwidth, KernelSpec};
use crate::processes::{normal_sf, DensityFn};
use crate::quadrature::{integrate, integrate_piecewise, trapezoid, trapezoid_nonuniform};
use crate::scalar::Scalar;

pub const MAX_EXACT_N: usize = 20_000;
pub const MAX_DECOMPOSITION_N: usize = 5_000;

/// Step of the quadratures against the plain densities `f`, `f0`.
pub const DENSITY_STEP: f64 = 1e-4;

/// Lattice spacing for integrals of smoothed densities over the whole line.
pub fn smooth_step<T: Scalar>(h: T) -> T {
    (h / T::lit(20.0)).max(T::lit(1e-3)).min(T::lit(0.01))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    NullCalibrated,
    AlternativeCalibrated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome<T> {
    pub t_stat: T,
    pub n: usize,
    pub h: T,
    pub centering: T,
    pub variance: T,
    pub z: T,
    /// Upper-tail normal probability of `z`.
    pub p_value: T,
    pub regime: Regime,
    pub source: EstimateSource,
    pub kernel: KernelSpec,
    pub f0: String,
}

impl<T> TestOutcome<T> {
    pub fn with_source(mut self, source: EstimateSource) -> Self {
        self.source = source;
        self
    }
}

/// `(K_h * f)` sampled on the lattice `k * step` covering `[-L - h, L + h]`.
#[derive(Clone, Debug)]
pub struct SmoothedLattice<T> {
    pub step: T,
    pub first: i64,
    pub values: Vec<T>,
}

impl<T: Scalar> SmoothedLattice<T> {
    pub fn new(kernel: KernelSpec, h: T, f: &DensityFn, step: T) -> Result<Self> {
        check_bandwidth(h)?;
        let reach = T::lit(DOMAIN_LIMIT) + h * T::lit(kernel.support_halfwidth());
        let (k0, k1) = lattice_range(-reach, reach, step);
        let values = (k0..=k1).map(|k| kernel.convolve_unchecked(h, f, lattice_point(k, step))).collect();
        Ok(SmoothedLattice { step, first: k0, values })
    }

    pub fn integral_of_square(&self) -> T {
        let sq: Vec<T> = self.values.iter().map(|v| *v * *v).collect();
        trapezoid(&sq, self.step)
    }
}

/// `(K_h * f0)` precomputed on the estimation-grid lattice, for repeated
/// evaluation of the statistic at one `(kernel, h, f0)`.
#[derive(Clone, Debug)]
pub struct NullReference<T> {
    pub kernel: KernelSpec,
    pub h: T,
    pub f0: DensityFn,
    lattice: SmoothedLattice<T>,
}

impl<T: Scalar> NullReference<T> {
    pub fn new(kernel: KernelSpec, h: T, f0: DensityFn) -> Result<Self> {
        let lattice = SmoothedLattice::new(kernel, h, &f0, grid_step(h))?;
        Ok(NullReference { kernel, h, f0, lattice })
    }

    /// The statistic for an estimate whose grid lies on this lattice. Outside
    /// the estimate's grid `f_hat` vanishes and only `(K_h * f0)^2` contributes.
    pub fn statistic(&self, fhat: &DensityEstimate<T>) -> Result<T> {
        check_estimate(fhat, self.kernel, self.h)?;
        let step = self.lattice.step;
        let offset = (fhat.grid[0] / step).round().to_i64().unwrap_or(i64::MIN) - self.lattice.first;
        let fits = offset >= 0
            && (offset as usize) + fhat.grid.len() <= self.lattice.values.len()
            && fhat.grid[0] == lattice_point(self.lattice.first + offset, step);
        if !fits {
            return Err(Error::GridMismatch("estimate grid is not on the reference lattice".into()));
        }
        let start = offset as usize;
        let integrand: Vec<T> = self
            .lattice
            .values
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d = if i >= start && i < start + fhat.values.len() { fhat.values[i - start] - *e } else { -*e };
                d * d
            })
            .collect();
        Ok(trapezoid(&integrand, step))
    }
}

fn check_estimate<T: Scalar>(fhat: &DensityEstimate<T>, kernel: KernelSpec, h: T) -> Result<()> {
    if fhat.kernel != kernel || fhat.bandwidth != h {
        return Err(Error::param(format!(
            "estimate built with ({}, h = {}) but statistic requested with ({}, h = {h})",
            fhat.kernel.name(),
            fhat.bandwidth,
            kernel.name()
        )));
    }
    if fhat.grid.len() < 2 {
        return Err(Error::GridMismatch("estimate grid has fewer than two points".into()));
    }
    Ok(())
}

/// The statistic by the trapezoid rule on the estimate's grid, plus the tails
/// of `(K_h * f0)^2` beyond the grid out to the domain limit.
pub fn statistic_quadrature<T: Scalar>(
    fhat: &DensityEstimate<T>,
    kernel: KernelSpec,
    h: T,
    f0: &DensityFn,
) -> Result<T> {
    check_estimate(fhat, kernel, h)?;
    let grid = &fhat.grid;
    let integrand: Vec<T> = grid
        .iter()
        .zip(&fhat.values)
        .map(|(&t, &v)| {
            let d = v - kernel.convolve_unchecked(h, f0, t);
            d * d
        })
        .collect();
    let main = trapezoid_nonuniform(grid, &integrand);
    let reach = T::lit(DOMAIN_LIMIT) + h * T::lit(kernel.support_halfwidth());
    let step = grid_step(h);
    let tail = |t: T| kernel.convolve_unchecked(h, f0, t).powi(2);
    let left = integrate(tail, -reach, grid[0], step);
    let right = integrate(tail, grid[grid.len() - 1], reach, step);
    Ok(main + left + right)
}

/// `sum_{i<j} (K*K)((x_j - x_i) / h)` over a sorted sample.
fn pair_convolution_sum<T: Scalar>(sorted: &[T], kernel: KernelSpec, h: T) -> T {
    let reach = T::lit(2.0 * kernel.support_halfwidth()) * h;
    let mut total = T::zero();
    for (i, &xi) in sorted.iter().enumerate() {
        let mut row = T::zero();
        for &xj in &sorted[i + 1..] {
            let gap = xj - xi;
            if gap >= reach {
                break;
            }
            row = row + kernel.self_convolution(gap / h);
        }
        total = total + row;
    }
    total
}

fn sorted_copy<T: Scalar>(sample: &[T]) -> Result<Vec<T>> {
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("sample contains non-finite values"));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(s)
}

/// Grid-free evaluation of the statistic:
/// `(1/n^2) sum_ij (K_h*K_h)(x_i - x_j) - (2/n) sum_i (K_h*K_h*f0)(x_i) + int (K_h*f0)^2`.
pub fn statistic_exact<T: Scalar>(sample: &[T], kernel: KernelSpec, h: T, f0: &DensityFn) -> Result<T> {
    ExactStatistic::new(kernel, h, f0)?.evaluate(sample)
}

/// [`statistic_exact`] with `int (K_h*f0)^2` computed once for reuse across samples.
#[derive(Clone, Debug)]
pub struct ExactStatistic<T> {
    pub kernel: KernelSpec,
    pub h: T,
    pub f0: DensityFn,
    reference_energy: T,
}

impl<T: Scalar> ExactStatistic<T> {
    pub fn new(kernel: KernelSpec, h: T, f0: &DensityFn) -> Result<Self> {
        let lattice = SmoothedLattice::new(kernel, h, f0, smooth_step(h))?;
        Ok(Self::from_lattice(kernel, h, f0, &lattice))
    }

    fn from_lattice(kernel: KernelSpec, h: T, f0: &DensityFn, lattice: &SmoothedLattice<T>) -> Self {
        ExactStatistic { kernel, h, f0: *f0, reference_energy: lattice.integral_of_square() }
    }

    pub fn evaluate(&self, sample: &[T]) -> Result<T> {
        let n = sample.len();
        if n == 0 {
            return Err(Error::InsufficientData("statistic of an empty sample".into()));
        }
        if n > MAX_EXACT_N {
            return Err(Error::TooLarge { n, limit: MAX_EXACT_N });
        }
        let (k, h) = (self.kernel, self.h);
        let sorted = sorted_copy(sample)?;
        let pairs = exact_pair_term(&sorted, k, h);
        let cross =
            sorted.iter().map(|&x| k.double_convolve_unchecked(h, &self.f0, x)).sum::<T>() / T::from_usize_lossy(n);
        Ok(pairs - T::lit(2.0) * cross + self.reference_energy)
    }
}

/// `(1/n^2) sum_ij (K_h*K_h)(x_i - x_j)` including the diagonal.
fn exact_pair_term<T: Scalar>(sorted: &[T], kernel: KernelSpec, h: T) -> T {
    let nf = T::from_usize_lossy(sorted.len());
    let off_diag = pair_convolution_sum(sorted, kernel, h);
    (nf * kernel.self_convolution(T::zero()) + T::lit(2.0) * off_diag) / (nf * nf * h)
}

/// `int f^2` by quadrature.
pub fn integral_of_square<T: Scalar>(f: &DensityFn) -> T {
    let l = T::lit(DOMAIN_LIMIT);
    integrate_piecewise(|x| f.pdf(x).powi(2), &[-l, T::zero(), l], T::lit(DENSITY_STEP))
}

/// Centering and variance of the statistic under `H0` at one `(n, h)`.
#[derive(Clone, Debug)]
pub struct NullCalibration<T> {
    pub n: usize,
    pub h: T,
    pub kernel: KernelSpec,
    pub f0: DensityFn,
    /// `r_k / (n h)`
    pub centering: T,
    /// `2 int f0^2 r_kk`
    pub variance: T,
}

impl<T: Scalar> NullCalibration<T> {
    pub fn new(n: usize, h: T, kernel: KernelSpec, f0: &DensityFn) -> Result<Self> {
        check_bandwidth(h)?;
        if n == 0 {
            return Err(Error::param("n must be positive"));
        }
        let consts = kernel.constants::<T>();
        let variance = T::lit(2.0) * integral_of_square::<T>(f0) * consts.r_kk;
        if !(variance > T::zero()) {
            return Err(Error::Degenerate("null variance is not positive".into()));
        }
        let centering = consts.r_k / (T::from_usize_lossy(n) * h);
        Ok(NullCalibration { n, h, kernel, f0: *f0, centering, variance })
    }

    pub fn standardize(&self, t_stat: T) -> TestOutcome<T> {
        let scale = T::from_usize_lossy(self.n) * self.h.sqrt();
        let z = scale * (t_stat - self.centering) / self.variance.sqrt();
        TestOutcome {
            t_stat,
            n: self.n,
            h: self.h,
            centering: self.centering,
            variance: self.variance,
            z,
            p_value: T::lit(normal_sf(z.as_f64())),
            regime: Regime::NullCalibrated,
            source: EstimateSource::Residuals,
            kernel: self.kernel,
            f0: self.f0.name().to_string(),
        }
    }
}

pub fn standardize_null<T: Scalar>(
    t_stat: T,
    n: usize,
    h: T,
    kernel: KernelSpec,
    f0: &DensityFn,
) -> Result<TestOutcome<T>> {
    Ok(NullCalibration::new(n, h, kernel, f0)?.standardize(t_stat))
}

/// Centering and variance of the statistic under a fixed alternative `f`.
#[derive(Clone, Debug)]
pub struct AlternativeCalibration<T> {
    pub n: usize,
    pub h: T,
    pub kernel: KernelSpec,
    pub f: DensityFn,
    pub f0: DensityFn,
    /// `int (K_h * (f - f0))^2`
    pub centering: T,
    /// `4 Var[(f - f0)(eps)]`, `eps ~ f`
    pub variance: T,
}

/// `d(f, f0)` below this is treated as `f = f0`.
pub const MIN_ALTERNATIVE_DISTANCE: f64 = 1e-10;

impl<T: Scalar> AlternativeCalibration<T> {
    pub fn new(n: usize, h: T, kernel: KernelSpec, f: &DensityFn, f0: &DensityFn) -> Result<Self> {
        check_bandwidth(h)?;
        let l = T::lit(DOMAIN_LIMIT);
        let breaks = [-l, T::zero(), l];
        let step = T::lit(DENSITY_STEP);
        let diff = |x: T| f.pdf(x) - f0.pdf(x);
        let distance = integrate_piecewise(|x| diff(x).powi(2), &breaks, step);
        if !(distance > T::lit(MIN_ALTERNATIVE_DISTANCE)) {
            return Err(Error::Degenerate(format!(
                "alternative standardization needs f != f0, but d(f, f0) = {distance}"
            )));
        }
        let second = integrate_piecewise(|x| diff(x).powi(2) * f.pdf(x), &breaks, step);
        let first = integrate_piecewise(|x| diff(x) * f.pdf(x), &breaks, step);
        let variance = T::lit(4.0) * (second - first * first);
        if !(variance > T::zero()) {
            return Err(Error::Degenerate("alternative variance is not positive".into()));
        }
        let centering = smoothed_difference_energy(kernel, h, f, f0)?;
        Ok(AlternativeCalibration { n, h, kernel, f: *f, f0: *f0, centering, variance })
    }

    pub fn standardize(&self, t_stat: T) -> TestOutcome<T> {
        let z = T::from_usize_lossy(self.n).sqrt() * (t_stat - self.centering) / self.variance.sqrt();
        TestOutcome {
            t_stat,
            n: self.n,
            h: self.h,
            centering: self.centering,
            variance: self.variance,
            z,
            p_value: T::lit(normal_sf(z.as_f64())),
            regime: Regime::AlternativeCalibrated,
            source: EstimateSource::Residuals,
            kernel: self.kernel,
            f0: self.f0.name().to_string(),
        }
    }
}

/// `int (K_h * (f - f0))^2`
pub fn smoothed_difference_energy<T: Scalar>(kernel: KernelSpec, h: T, f: &DensityFn, f0: &DensityFn) -> Result<T> {
    let step = smooth_step(h);
    let ef = SmoothedLattice::new(kernel, h, f, step)?;
    let e0 = SmoothedLattice::new(kernel, h, f0, step)?;
    let sq: Vec<T> = ef.values.iter().zip(&e0.values).map(|(a, b)| (*a - *b).powi(2)).collect();
    Ok(trapezoid(&sq, step))
}

pub fn standardize_alternative<T: Scalar>(
    t_stat: T,
    n: usize,
    h: T,
    kernel: KernelSpec,
    f: &DensityFn,
    f0: &DensityFn,
) -> Result<TestOutcome<T>> {
    Ok(AlternativeCalibration::new(n, h, kernel, f, f0)?.standardize(t_stat))
}

/// Terms of the true-error statistic
/// `T_n = U_n + (2/n) sum Y_i + diagonal + int g_h^2` with `g_h = K_h * (f - f0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport<T> {
    /// `(2/n^2) sum_{i<j} H_n(eps_i, eps_j)`
    pub u_n: T,
    /// `(2/n) sum_i [(K_h * g_h)(eps_i) - E (K_h * g_h)(eps)]`
    pub linear_term: T,
    /// `(1/n^2) sum_i int (K_h(x - eps_i) - e_h(x))^2 dx`
    pub diag_term: T,
    /// `int g_h^2`
    pub g_sq_term: T,
    /// The statistic evaluated directly by [`statistic_exact`].
    pub t_n: T,
}

impl<T: Scalar> DecompositionReport<T> {
    pub fn sum(&self) -> T {
        self.u_n + self.linear_term + self.diag_term + self.g_sq_term
    }
}

/// Splits the true-error statistic into its degenerate U-statistic, linear,
/// diagonal and bias parts. `f` is the true error density.
///
/// `H_n(a, b) = (K_h*K_h)(a - b) - m(a) - m(b) + int e_h^2` with
/// `e_h = K_h * f` and `m = K_h * K_h * f`. The expectation in the linear term
/// is `int (K_h * g_h) f = int g_h e_h`.
pub fn decomposition<T: Scalar>(
    sample: &[T],
    kernel: KernelSpec,
    h: T,
    f: &DensityFn,
    f0: &DensityFn,
) -> Result<DecompositionReport<T>> {
    Decomposition::new(kernel, h, f, f0)?.evaluate(sample)
}

/// [`decomposition`] with the sample-free integrals computed once.
#[derive(Clone, Debug)]
pub struct Decomposition<T> {
    pub kernel: KernelSpec,
    pub h: T,
    pub f: DensityFn,
    pub f0: DensityFn,
    /// `int e_h^2`
    e_sq: T,
    /// `int g_h e_h`
    g_e: T,
    /// `int g_h^2`
    g_sq: T,
    exact: ExactStatistic<T>,
}

impl<T: Scalar> Decomposition<T> {
    pub fn new(kernel: KernelSpec, h: T, f: &DensityFn, f0: &DensityFn) -> Result<Self> {
        let step = smooth_step(h);
        let e0 = SmoothedLattice::new(kernel, h, f0, step)?;
        let ef = if f == f0 { e0.clone() } else { SmoothedLattice::new(kernel, h, f, step)? };
        let g: Vec<T> = ef.values.iter().zip(&e0.values).map(|(a, b)| *a - *b).collect();
        let g_e = trapezoid(&g.iter().zip(&ef.values).map(|(a, b)| *a * *b).collect::<Vec<T>>(), step);
        let g_sq = trapezoid(&g.iter().map(|a| *a * *a).collect::<Vec<T>>(), step);
        Ok(Decomposition {
            kernel,
            h,
            f: *f,
            f0: *f0,
            e_sq: ef.integral_of_square(),
            g_e,
            g_sq,
            exact: ExactStatistic::from_lattice(kernel, h, f0, &e0),
        })
    }

    pub fn evaluate(&self, sample: &[T]) -> Result<DecompositionReport<T>> {
        let n = sample.len();
        if n < 2 {
            return Err(Error::InsufficientData("decomposition needs at least two errors".into()));
        }
        if n > MAX_DECOMPOSITION_N {
            return Err(Error::TooLarge { n, limit: MAX_DECOMPOSITION_N });
        }
        let (kernel, h) = (self.kernel, self.h);
        let sorted = sorted_copy(sample)?;
        let nf = T::from_usize_lossy(n);
        let two = T::lit(2.0);

        let m_f: Vec<T> = sorted.iter().map(|&x| kernel.double_convolve_unchecked(h, &self.f, x)).collect();
        let m_f0: Vec<T> = if self.f == self.f0 {
            m_f.clone()
        } else {
            sorted.iter().map(|&x| kernel.double_convolve_unchecked(h, &self.f0, x)).collect()
        };
        let sum_mf: T = m_f.iter().copied().sum();
        let sum_gap: T = m_f.iter().zip(&m_f0).map(|(a, b)| *a - *b).sum();

        let pairs = pair_convolution_sum(&sorted, kernel, h) / h;
        let u_n = two / (nf * nf) * (pairs - (nf - T::one()) * sum_mf + nf * (nf - T::one()) / two * self.e_sq);
        let linear_term = two / nf * sum_gap - two * self.g_e;
        let diag_term = (nf * kernel.self_convolution(T::zero()) / h - two * sum_mf + nf * self.e_sq) / (nf * nf);

        Ok(DecompositionReport { u_n, linear_term, diag_term, g_sq_term: self.g_sq, t_n: self.exact.evaluate(sample)? })
    }
}

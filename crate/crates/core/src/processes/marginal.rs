//! Marginal error densities.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard normal density.
#[inline]
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// A symmetric error density with closed-form pdf and CDF.
///
/// `LaplaceUnitVar` has a kink at the origin and is intended as an
/// alternative generator only; `NormalMixture` is the smooth alternative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DensityFn {
    StdNormal,
    LaplaceUnitVar,
    /// `0.5 N(-mu, 1 - mu^2) + 0.5 N(mu, 1 - mu^2)`, unit variance.
    NormalMixture {
        mu: f64,
    },
}

impl DensityFn {
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let expect_params = |k: usize| {
            if params.len() == k {
                Ok(())
            } else {
                Err(Error::Config(format!("density `{name}` takes {k} parameter(s), got {}", params.len())))
            }
        };
        match name {
            "std_normal" => expect_params(0).map(|_| DensityFn::StdNormal),
            "laplace_unit_var" => expect_params(0).map(|_| DensityFn::LaplaceUnitVar),
            "normal_mixture" => {
                expect_params(1)?;
                DensityFn::normal_mixture(params[0])
            }
            other => Err(Error::Config(format!(
                "unknown density `{other}` (expected std_normal, laplace_unit_var or normal_mixture)"
            ))),
        }
    }

    pub fn normal_mixture(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::param(format!("normal_mixture requires 0 < mu < 1, got {mu}")));
        }
        Ok(DensityFn::NormalMixture { mu })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DensityFn::StdNormal => "std_normal",
            DensityFn::LaplaceUnitVar => "laplace_unit_var",
            DensityFn::NormalMixture { .. } => "normal_mixture",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            DensityFn::NormalMixture { mu } => vec![*mu],
            _ => Vec::new(),
        }
    }

    /// Whether the density is twice continuously differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, DensityFn::LaplaceUnitVar)
    }

    #[inline]
    pub fn pdf<T: Scalar>(&self, x: T) -> T {
        match *self {
            DensityFn::StdNormal => normal_pdf(x),
            DensityFn::LaplaceUnitVar => {
                let s = T::SQRT_2();
                (-s * x.abs()).exp() / s
            }
            DensityFn::NormalMixture { mu } => {
                let sd = T::lit((1.0 - mu * mu).sqrt());
                let m = T::lit(mu);
                (normal_pdf((x - m) / sd) + normal_pdf((x + m) / sd)) * T::lit(0.5) / sd
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DensityFn::StdNormal => normal_cdf(x),
            DensityFn::LaplaceUnitVar => {
                let s = std::f64::consts::SQRT_2;
                if x < 0.0 {
                    0.5 * (s * x).exp()
                } else {
                    1.0 - 0.5 * (-s * x).exp()
                }
            }
            DensityFn::NormalMixture { mu } => {
                let sd = (1.0 - mu * mu).sqrt();
                0.5 * (normal_cdf((x - mu) / sd) + normal_cdf((x + mu) / sd))
            }
        }
    }

    /// Inverse CDF on `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            DensityFn::StdNormal => normal_quantile(p),
            DensityFn::LaplaceUnitVar => {
                let s = std::f64::consts::SQRT_2;
                if p < 0.5 {
                    (2.0 * p).ln() / s
                } else {
                    -(2.0 * (1.0 - p)).ln() / s
                }
            }
            DensityFn::NormalMixture { .. } => self.invert_cdf(p),
        }
    }

    /// `F^{-1}(Phi(z))`, evaluated through the lower tail for accuracy.
    ///
    /// All built-in densities are symmetric, so positive `z` maps through
    /// `-F^{-1}(Phi(-z))`.
    pub fn from_standard_normal(&self, z: f64) -> f64 {
        match self {
            DensityFn::StdNormal => z,
            _ if z > 0.0 => -self.quantile(normal_cdf(-z)),
            _ => self.quantile(normal_cdf(z)),
        }
    }

    // Safeguarded Newton on the CDF.
    fn invert_cdf(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        let mut x = normal_quantile(p);
        for _ in 0..200 {
            let diff = self.cdf(x) - p;
            if diff > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dens = self.pdf(x);
            let mut next = x - diff / dens;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

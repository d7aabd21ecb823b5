//! Compact-support kernels, their self-convolutions and the constants that
//! enter the limit laws of the statistic.
//!
//! All built-ins are symmetric polynomial densities on `[-1, 1]`. Their
//! self-convolutions are derived exactly over the rationals (see [`crate::poly`])
//! and cached as rounded piecewise polynomials.

use std::sync::OnceLock;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{rat, rational_to_f64, Piece, PiecewiseF64, PiecewisePoly, Poly};
use crate::processes::DensityFn;
use crate::quadrature::integrate_piecewise;
use crate::scalar::Scalar;

/// Step (in kernel units) of the trapezoid rule behind every kernel-weighted
/// convolution integral.
pub const CONVOLUTION_STEP: f64 = 1e-3;

/// Step of the quadrature path for the kernel constants.
pub const CONSTANTS_QUADRATURE_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    /// `0.75 (1 - x^2)`; continuous, with a derivative jump at the support edge.
    #[default]
    Epanechnikov,
    /// `(15/16) (1 - x^2)^2`; continuously differentiable on the whole line.
    Quartic,
    /// `1 - |x|`
    Triangular,
}

/// `int K^2`, `int (K*K)^2` and `int x^2 K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants<T> {
    pub r_k: T,
    pub r_kk: T,
    pub sigma2_k: T,
}

/// The constants as exact rationals.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactKernelConstants {
    pub r_k: BigRational,
    pub r_kk: BigRational,
    pub sigma2_k: BigRational,
}

struct KernelTables {
    kernel: PiecewiseF64,
    convolution: PiecewiseF64,
    exact: ExactKernelConstants,
    constants: KernelConstants<f64>,
}

impl KernelTables {
    fn build(pieces: PiecewisePoly) -> Self {
        let conv = pieces.self_convolution();
        let exact = ExactKernelConstants {
            r_k: pieces.integral_of_square(),
            r_kk: conv.integral_of_square(),
            sigma2_k: pieces.moment(2),
        };
        let constants = KernelConstants {
            r_k: rational_to_f64(&exact.r_k),
            r_kk: rational_to_f64(&exact.r_kk),
            sigma2_k: rational_to_f64(&exact.sigma2_k),
        };
        KernelTables { kernel: pieces.to_f64(), convolution: conv.to_f64(), exact, constants }
    }
}

impl KernelSpec {
    pub const ALL: [KernelSpec; 3] = [KernelSpec::Epanechnikov, KernelSpec::Quartic, KernelSpec::Triangular];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "epanechnikov" => Ok(KernelSpec::Epanechnikov),
            "quartic" => Ok(KernelSpec::Quartic),
            "triangular" => Ok(KernelSpec::Triangular),
            other => {
                Err(Error::Config(format!("unknown kernel `{other}` (expected epanechnikov, quartic or triangular)")))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Quartic => "quartic",
            KernelSpec::Triangular => "triangular",
        }
    }

    pub fn support_halfwidth(self) -> f64 {
        1.0
    }

    /// The kernel as exact polynomial pieces.
    pub fn pieces(self) -> PiecewisePoly {
        let one = || rat(1, 1);
        let piece = |lo, hi, poly| Piece { lo, hi, poly };
        let pieces = match self {
            KernelSpec::Epanechnikov => {
                vec![piece(rat(-1, 1), one(), Poly::from_ints(&[(3, 4), (0, 1), (-3, 4)]))]
            }
            KernelSpec::Quartic => {
                vec![piece(rat(-1, 1), one(), Poly::from_ints(&[(15, 16), (0, 1), (-15, 8), (0, 1), (15, 16)]))]
            }
            KernelSpec::Triangular => vec![
                piece(rat(-1, 1), rat(0, 1), Poly::from_ints(&[(1, 1), (1, 1)])),
                piece(rat(0, 1), one(), Poly::from_ints(&[(1, 1), (-1, 1)])),
            ],
        };
        PiecewisePoly { pieces }
    }

    fn tables(self) -> &'static KernelTables {
        static TABLES: OnceLock<Vec<KernelTables>> = OnceLock::new();
        let all = TABLES.get_or_init(|| KernelSpec::ALL.iter().map(|k| KernelTables::build(k.pieces())).collect());
        &all[self as usize]
    }

    /// Breakpoints of `K` (the support ends and any interior kinks).
    pub fn breakpoints(self) -> Vec<f64> {
        self.tables().kernel.breakpoints()
    }

    /// Breakpoints of `K * K`.
    pub fn convolution_breakpoints(self) -> Vec<f64> {
        self.tables().convolution.breakpoints()
    }

    /// `K(x)`; zero outside `[-1, 1]`.
    #[inline]
    pub fn eval<T: Scalar>(self, x: T) -> T {
        self.tables().kernel.eval(x)
    }

    /// `(K * K)(u)` from the exact piecewise polynomial. Even in `u` by construction.
    #[inline]
    pub fn self_convolution<T: Scalar>(self, u: T) -> T {
        self.tables().convolution.eval(u.abs())
    }

    /// `(K * K)(u)` by direct quadrature, split at every kink of the integrand.
    pub fn self_convolution_quadrature<T: Scalar>(self, u: T, step: T) -> T {
        let u = u.abs();
        let mut breaks: Vec<T> = Vec::new();
        for b in self.breakpoints() {
            let b = T::lit(b);
            for x in [b, u - b] {
                if x >= -T::one() && x <= T::one() {
                    breaks.push(x);
                }
            }
        }
        if breaks.len() < 2 {
            return T::zero();
        }
        integrate_piecewise(|x| self.eval(x) * self.eval(u - x), &breaks, step)
    }

    /// Closed-form constants, rounded from the exact rationals.
    pub fn constants<T: Scalar>(self) -> KernelConstants<T> {
        let c = self.tables().constants;
        KernelConstants { r_k: T::lit(c.r_k), r_kk: T::lit(c.r_kk), sigma2_k: T::lit(c.sigma2_k) }
    }

    pub fn exact_constants(self) -> ExactKernelConstants {
        self.tables().exact.clone()
    }

    /// The same constants by trapezoid quadrature. `int (K*K)^2` nests a
    /// quadrature for `K*K` inside the outer rule.
    pub fn quadrature_constants(self, step: f64) -> KernelConstants<f64> {
        let breaks = self.breakpoints();
        let r_k = integrate_piecewise(|x: f64| self.eval(x).powi(2), &breaks, step);
        let sigma2_k = integrate_piecewise(|x: f64| x * x * self.eval(x), &breaks, step);
        let inner = CONVOLUTION_STEP.min(step.max(CONVOLUTION_STEP / 2.0));
        let outer = |u: f64| self.self_convolution_quadrature(u, inner).powi(2);
        // (K*K)^2 is even
        let conv_breaks: Vec<f64> = self.convolution_breakpoints().into_iter().filter(|b| *b >= 0.0).collect();
        let r_kk = 2.0 * integrate_piecewise(outer, &conv_breaks, inner);
        KernelConstants { r_k, r_kk, sigma2_k }
    }

    /// `K_h(u) = K(u / h) / h`.
    pub fn scaled_eval<T: Scalar>(self, h: T, u: T) -> Result<T> {
        check_bandwidth(h)?;
        Ok(self.eval(u / h) / h)
    }

    /// `(K_h * f0)(t) = int K(x) f0(t - h x) dx`.
    pub fn convolve_with_density<T: Scalar>(self, h: T, f0: &DensityFn, t: T) -> Result<T> {
        check_bandwidth(h)?;
        Ok(self.convolve_unchecked(h, f0, t))
    }

    #[inline]
    pub(crate) fn convolve_unchecked<T: Scalar>(self, h: T, f0: &DensityFn, t: T) -> T {
        let breaks: Vec<T> = self.breakpoints().into_iter().map(T::lit).collect();
        integrate_piecewise(|x| self.eval(x) * f0.pdf(t - h * x), &breaks, T::lit(CONVOLUTION_STEP))
    }

    /// `(K_h * K_h * f)(t) = int (K*K)(w) f(t - h w) dw`.
    pub(crate) fn double_convolve_unchecked<T: Scalar>(self, h: T, f: &DensityFn, t: T) -> T {
        let breaks: Vec<T> = self.convolution_breakpoints().into_iter().map(T::lit).collect();
        integrate_piecewise(|w| self.self_convolution(w) * f.pdf(t - h * w), &breaks, T::lit(CONVOLUTION_STEP))
    }
}

pub(crate) fn check_bandwidth<T: Scalar>(h: T) -> Result<()> {
    if h > T::zero() && h.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("bandwidth must be positive and finite, got {h}")))
    }
}

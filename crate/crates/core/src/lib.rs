//! Goodness-of-fit testing for the error density of nonlinear autoregressive
//! models: simulation of dependent error streams, conditional least squares,
//! kernel density estimation of residuals, the integrated squared deviation
//! statistic and a Monte Carlo harness around them.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); kernel
//! constants are also available exactly as rationals. The aliases below fix
//! the scalar to `f64`.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brtest;
pub mod data;
pub mod density;
pub mod error;
pub mod estimation;
pub mod kernels;
pub mod montecarlo;
pub mod poly;
pub mod processes;
pub mod quadrature;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use montecarlo::{ExperimentConfig, MonteCarloReport};
pub use processes::{DensityFn, ErrorProcessSpec, ModelSpec};
pub use scalar::Scalar;

pub type DensityEstimate = density::DensityEstimate<f64>;
pub type FitResult = estimation::FitResult<f64>;
pub type KernelConstants = kernels::KernelConstants<f64>;
pub type SampleSeries = processes::SampleSeries<f64>;
pub type TestOutcome = brtest::TestOutcome<f64>;
pub type DecompositionReport = brtest::DecompositionReport<f64>;

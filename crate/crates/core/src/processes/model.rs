//! Parametric autoregression functions and simulated sample paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A parametric family `r_theta` of order `p` with `q` parameters.
///
/// `lags` is the window `(X_{i-p}, ..., X_{i-1})` in chronological order, so
/// the most recent value is last.
pub trait AutoregressiveModel<T: Scalar>: Sync {
    fn order(&self) -> usize;
    fn dim(&self) -> usize;
    fn mean_function(&self, theta: &[T], lags: &[T]) -> T;
    /// Writes `d r_theta / d theta_j` into `out` (length `dim()`).
    fn gradient(&self, theta: &[T], lags: &[T], out: &mut [T]);
    fn check_admissible(&self, _theta: &[T]) -> Result<()> {
        Ok(())
    }
}

/// Built-in first-order families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// `r(x) = theta_1 x`
    LinearAr,
    /// `r(x) = (theta_1 + theta_2 exp(-theta_3 x^2)) x`
    Expar,
}

impl ModelSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear_ar" => Ok(ModelSpec::LinearAr),
            "expar" => Ok(ModelSpec::Expar),
            other => Err(Error::Config(format!("unknown model `{other}` (expected linear_ar or expar)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSpec::LinearAr => "linear_ar",
            ModelSpec::Expar => "expar",
        }
    }
}

impl<T: Scalar> AutoregressiveModel<T> for ModelSpec {
    fn order(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        match self {
            ModelSpec::LinearAr => 1,
            ModelSpec::Expar => 3,
        }
    }

    #[inline]
    fn mean_function(&self, theta: &[T], lags: &[T]) -> T {
        let x = lags[lags.len() - 1];
        match self {
            ModelSpec::LinearAr => theta[0] * x,
            ModelSpec::Expar => (theta[0] + theta[1] * (-theta[2] * x * x).exp()) * x,
        }
    }

    #[inline]
    fn gradient(&self, theta: &[T], lags: &[T], out: &mut [T]) {
        let x = lags[lags.len() - 1];
        match self {
            ModelSpec::LinearAr => out[0] = x,
            ModelSpec::Expar => {
                let decay = (-theta[2] * x * x).exp();
                out[0] = x;
                out[1] = decay * x;
                out[2] = -theta[1] * x * x * x * decay;
            }
        }
    }

    /// Linear: `|theta_1| < 1`. Expar: `|theta_1| + |theta_2| < 1` and `theta_3 >= 0`,
    /// which bounds the slope of `r` by one in absolute value.
    fn check_admissible(&self, theta: &[T]) -> Result<()> {
        let q = <Self as AutoregressiveModel<T>>::dim(self);
        if theta.len() != q {
            return Err(Error::param(format!("{} expects {q} parameters, got {}", self.name(), theta.len())));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("non-finite parameter"));
        }
        match self {
            ModelSpec::LinearAr if theta[0].abs() >= T::one() => {
                Err(Error::param(format!("linear_ar is non-stationary: |theta_1| = {} >= 1", theta[0].abs())))
            }
            ModelSpec::Expar if theta[0].abs() + theta[1].abs() >= T::one() => Err(Error::param(format!(
                "expar stationarity margin violated: |theta_1| + |theta_2| = {} >= 1",
                theta[0].abs() + theta[1].abs()
            ))),
            ModelSpec::Expar if theta[2] < T::zero() => {
                Err(Error::param(format!("expar requires theta_3 >= 0, got {}", theta[2])))
            }
            _ => Ok(()),
        }
    }
}

/// Observations `X_{1-p}, ..., X_n` with the errors that generated them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries<T> {
    /// Length `n + p`; the first `p` entries are the initial lags.
    pub values: Vec<T>,
    pub order: usize,
    pub theta_true: Vec<T>,
    /// `eps_1, ..., eps_n`, aligned with `values[p..]`. Empty for observed data.
    pub errors_true: Vec<T>,
    pub seed: u64,
    pub burn_in: usize,
}

impl<T: Scalar> SampleSeries<T> {
    /// Wraps observed data with no known truth.
    pub fn from_observations(values: Vec<T>, order: usize) -> Result<Self> {
        if values.len() <= order {
            return Err(Error::InsufficientData(format!(
                "{} observations cannot supply {order} initial lag(s) and any response",
                values.len()
            )));
        }
        Ok(SampleSeries { values, order, theta_true: Vec::new(), errors_true: Vec::new(), seed: 0, burn_in: 0 })
    }

    /// Number of responses `n`.
    pub fn len(&self) -> usize {
        self.values.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lag window for response `i` (0-based among the `n` responses).
    #[inline]
    pub fn lags(&self, i: usize) -> &[T] {
        &self.values[i..i + self.order]
    }

    #[inline]
    pub fn response(&self, i: usize) -> T {
        self.values[i + self.order]
    }

    pub fn responses(&self) -> &[T] {
        &self.values[self.order..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn admissibility() {
        let lin = ModelSpec::LinearAr;
        assert!(AutoregressiveModel::<f64>::check_admissible(&lin, &[0.5]).is_ok());
        assert!(AutoregressiveModel::<f64>::check_admissible(&lin, &[1.0]).is_err());
        assert!(AutoregressiveModel::<f64>::check_admissible(&lin, &[0.5, 0.1]).is_err());
        let ex = ModelSpec::Expar;
        assert!(AutoregressiveModel::<f64>::check_admissible(&ex, &[0.3, 0.4, 1.0]).is_ok());
        assert!(AutoregressiveModel::<f64>::check_admissible(&ex, &[0.6, -0.4, 1.0]).is_err());
        assert!(AutoregressiveModel::<f64>::check_admissible(&ex, &[0.3, 0.4, -1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn gradients_match_central_differences(
            t1 in -0.9_f64..0.9, t2 in -0.9_f64..0.9, t3 in 0.0_f64..3.0, x in -4.0_f64..4.0,
        ) {
            for (model, theta) in [(ModelSpec::LinearAr, vec![t1]), (ModelSpec::Expar, vec![t1, t2, t3])] {
                let mut grad = vec![0.0; theta.len()];
                model.gradient(&theta, &[x], &mut grad);
                for j in 0..theta.len() {
                    let eps = 1e-6;
                    let mut up = theta.clone();
                    let mut dn = theta.clone();
                    up[j] += eps;
                    dn[j] -= eps;
                    let fd = (model.mean_function(&up, &[x]) - model.mean_function(&dn, &[x])) / (2.0 * eps);
                    let scale = grad[j].abs().max(1e-3);
                    prop_assert!((fd - grad[j]).abs() / scale < 1e-5, "model {:?} j={} fd={} grad={}", model, j, fd, grad[j]);
                }
            }
        }
    }
}

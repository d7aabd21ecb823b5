//! Small descriptive and rank statistics shared by the diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processes::normal_cdf;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn lag_autocorrelation(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let num: f64 = x.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    num / denom
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and
/// `cdf`. Sorts `sample` in place.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            r[*k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rank correlation with one-sided p-values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// `P(rho* >= rho)` under exchangeability.
    pub p_increasing: f64,
    /// `P(rho* <= rho)` under exchangeability.
    pub p_decreasing: f64,
}

/// Exact permutation p-values up to 8 points, a normal approximation beyond.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanTest> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData("spearman trend needs at least two paired points".into()));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let rho = pearson(&rx, &ry);
    let n = x.len();
    let (p_inc, p_dec) = if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        let (mut ge, mut le, mut total) = (0usize, 0usize, 0usize);
        let tol = 1e-12;
        loop {
            let permuted: Vec<f64> = perm.iter().map(|&i| ry[i]).collect();
            let r = pearson(&rx, &permuted);
            ge += usize::from(r >= rho - tol);
            le += usize::from(r <= rho + tol);
            total += 1;
            if !next_permutation(&mut perm) {
                break;
            }
        }
        (ge as f64 / total as f64, le as f64 / total as f64)
    } else {
        let z = rho * ((n - 1) as f64).sqrt();
        (1.0 - normal_cdf(z), normal_cdf(z))
    };
    Ok(SpearmanTest { rho, p_increasing: p_inc, p_decreasing: p_dec })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Moments and KS distance of a standardized statistic against `N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityDiagnostics {
    pub size: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_distance: f64,
}

pub const MIN_NORMALITY_SAMPLE: usize = 100;

pub fn normality_diagnostics(z: &[f64]) -> Result<NormalityDiagnostics> {
    if z.len() < MIN_NORMALITY_SAMPLE {
        return Err(Error::InsufficientData(format!(
            "normality diagnostics need at least {MIN_NORMALITY_SAMPLE} values, got {}",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value in sample".into()));
    }
    let n = z.len() as f64;
    let m = mean(z);
    let central = |k: i32| z.iter().map(|v| (v - m).powi(k)).sum::<f64>() / n;
    let m2 = central(2);
    if m2 == 0.0 {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let mut sorted = z.to_vec();
    Ok(NormalityDiagnostics {
        size: z.len(),
        mean: m,
        variance: variance(z),
        skewness: central(3) / m2.powf(1.5),
        excess_kurtosis: central(4) / (m2 * m2) - 3.0,
        ks_distance: ks_distance(&mut sorted, normal_cdf),
    })
}

//! Exact piecewise-polynomial algebra used to derive kernel self-convolutions.
//!
//! Kernels are polynomials on a few intervals, so `K * K` is again piecewise
//! polynomial. The pieces are derived once over exact rationals and then
//! rounded to `f64` coefficients for evaluation.

use std::ops::{Add, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::scalar::Scalar;

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Nearest `f64` to an exact rational.
pub fn rational_to_f64(r: &Rational) -> f64 {
    const EXACT: f64 = 9_007_199_254_740_992.0; // 2^53
    match (r.numer().to_f64(), r.denom().to_f64()) {
        // Both parts exact, so IEEE division rounds correctly.
        (Some(n), Some(d)) if n.abs() <= EXACT && d <= EXACT => n / d,
        _ => r.to_f64().unwrap_or(f64::NAN),
    }
}

/// Univariate polynomial, coefficients in ascending degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<Rational>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Rational>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn from_ints(coeffs: &[(i64, i64)]) -> Self {
        Poly::new(coeffs.iter().map(|&(n, d)| rat(n, d)).collect())
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        self.coeffs.iter().rev().fold(Rational::zero(), |acc, c| acc * x + c)
    }

    pub fn antiderivative(&self) -> Poly {
        let mut out = vec![Rational::zero()];
        for (k, c) in self.coeffs.iter().enumerate() {
            out.push(c / rat(k as i64 + 1, 1));
        }
        Poly::new(out)
    }

    pub fn integral(&self, a: &Rational, b: &Rational) -> Rational {
        let anti = self.antiderivative();
        anti.eval(b) - anti.eval(a)
    }

    pub fn pow(&self, k: usize) -> Poly {
        (0..k).fold(Poly::new(vec![Rational::one()]), |acc, _| &acc * self)
    }

    fn to_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(rational_to_f64).collect()
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let len = self.coeffs.len().max(rhs.coeffs.len());
        let zero = Rational::zero();
        Poly::new((0..len).map(|k| self.coeffs.get(k).unwrap_or(&zero) + rhs.coeffs.get(k).unwrap_or(&zero)).collect())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        if self.coeffs.is_empty() || rhs.coeffs.is_empty() {
            return Poly::zero();
        }
        let mut out = vec![Rational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

#[derive(Clone, Debug)]
pub struct Piece {
    pub lo: Rational,
    pub hi: Rational,
    pub poly: Poly,
}

/// Piecewise polynomial, zero outside the union of its pieces.
#[derive(Clone, Debug)]
pub struct PiecewisePoly {
    pub pieces: Vec<Piece>,
}

/// Integration limit as a function of the convolution argument `u`.
enum Limit {
    Const(Rational),
    /// `u + offset`
    Shifted(Rational),
}

impl Limit {
    /// The limit as a polynomial in `u`.
    fn as_poly(&self) -> Poly {
        match self {
            Limit::Const(c) => Poly::new(vec![c.clone()]),
            Limit::Shifted(c) => Poly::new(vec![c.clone(), Rational::one()]),
        }
    }
}

/// Bivariate polynomial `sum c[i][j] u^i x^j`.
struct Bivariate {
    c: Vec<Vec<Rational>>,
}

impl Bivariate {
    /// `p(x) * q(u - x)`
    fn convolution_integrand(p: &Poly, q: &Poly) -> Bivariate {
        let deg_q = q.coeffs.len().saturating_sub(1);
        let deg_x = p.coeffs.len().saturating_sub(1) + deg_q;
        let mut c = vec![vec![Rational::zero(); deg_x + 1]; deg_q + 1];
        for (k, qk) in q.coeffs.iter().enumerate() {
            // (u - x)^k = sum_j C(k, j) u^(k - j) (-x)^j
            let mut binom = BigInt::one();
            for j in 0..=k {
                let sign = if j % 2 == 0 { 1 } else { -1 };
                let coef = qk * Rational::from_integer(binom.clone() * sign);
                for (m, pm) in p.coeffs.iter().enumerate() {
                    c[k - j][j + m] += &coef * pm;
                }
                binom = binom * BigInt::from(k - j) / BigInt::from(j + 1);
            }
        }
        Bivariate { c }
    }

    fn antiderivative_x(&self) -> Bivariate {
        let c = self
            .c
            .iter()
            .map(|row| {
                let mut out = vec![Rational::zero()];
                out.extend(row.iter().enumerate().map(|(j, v)| v / rat(j as i64 + 1, 1)));
                out
            })
            .collect();
        Bivariate { c }
    }

    /// Substitutes `x = limit(u)`, leaving a polynomial in `u`.
    fn at_x(&self, limit: &Limit) -> Poly {
        let x = limit.as_poly();
        let mut total = Poly::zero();
        for (i, row) in self.c.iter().enumerate() {
            let mut u_pow = vec![Rational::zero(); i];
            u_pow.push(Rational::one());
            let u_pow = Poly::new(u_pow);
            for (j, v) in row.iter().enumerate() {
                if v.is_zero() {
                    continue;
                }
                let term = &(&u_pow * &x.pow(j)) * &Poly::new(vec![v.clone()]);
                total = &total + &term;
            }
        }
        total
    }
}

impl PiecewisePoly {
    /// Breakpoints of all pieces, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<Rational> {
        let mut b: Vec<Rational> = self.pieces.iter().flat_map(|p| [p.lo.clone(), p.hi.clone()]).collect();
        b.sort();
        b.dedup();
        b
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        self.pieces.iter().find(|p| &p.lo <= x && x <= &p.hi).map_or_else(Rational::zero, |p| p.poly.eval(x))
    }

    /// `int f(x)^2 dx`
    pub fn integral_of_square(&self) -> Rational {
        self.pieces.iter().map(|p| (&p.poly * &p.poly).integral(&p.lo, &p.hi)).fold(Rational::zero(), |a, b| a + b)
    }

    /// `int x^k f(x) dx`
    pub fn moment(&self, k: usize) -> Rational {
        let mut mono = vec![Rational::zero(); k];
        mono.push(Rational::one());
        let mono = Poly::new(mono);
        self.pieces.iter().map(|p| (&mono * &p.poly).integral(&p.lo, &p.hi)).fold(Rational::zero(), |a, b| a + b)
    }

    /// The exact self-convolution `(f * f)(u) = int f(x) f(u - x) dx`.
    pub fn self_convolution(&self) -> PiecewisePoly {
        // (f * f)(u) can only change form where u is a sum of two breakpoints.
        let mut knots: Vec<Rational> = Vec::new();
        let bps = self.breakpoints();
        for a in &bps {
            for b in &bps {
                knots.push(a + b);
            }
        }
        knots.sort();
        knots.dedup();

        let two = rat(2, 1);
        let mut pieces = Vec::new();
        for w in knots.windows(2) {
            let (u0, u1) = (&w[0], &w[1]);
            let mid = (u0 + u1) / &two;
            let mut acc = Poly::zero();
            for pa in &self.pieces {
                for pb in &self.pieces {
                    // x in [a0, a1] and u - x in [b0, b1]
                    let shifted_lo = &mid - &pb.hi;
                    let shifted_hi = &mid - &pb.lo;
                    let lo =
                        if pa.lo >= shifted_lo { Limit::Const(pa.lo.clone()) } else { Limit::Shifted(-pb.hi.clone()) };
                    let hi =
                        if pa.hi <= shifted_hi { Limit::Const(pa.hi.clone()) } else { Limit::Shifted(-pb.lo.clone()) };
                    let lo_mid = if pa.lo >= shifted_lo { pa.lo.clone() } else { shifted_lo };
                    let hi_mid = if pa.hi <= shifted_hi { pa.hi.clone() } else { shifted_hi };
                    if lo_mid >= hi_mid {
                        continue;
                    }
                    let anti = Bivariate::convolution_integrand(&pa.poly, &pb.poly).antiderivative_x();
                    let upper = anti.at_x(&hi);
                    let lower = anti.at_x(&lo);
                    acc = &acc + &(&upper + &(&lower * &Poly::new(vec![rat(-1, 1)])));
                }
            }
            pieces.push(Piece { lo: u0.clone(), hi: u1.clone(), poly: acc });
        }
        PiecewisePoly { pieces }
    }

    pub fn to_f64(&self) -> PiecewiseF64 {
        PiecewiseF64 {
            pieces: self
                .pieces
                .iter()
                .map(|p| (rational_to_f64(&p.lo), rational_to_f64(&p.hi), p.poly.to_f64()))
                .collect(),
        }
    }
}

/// Rounded piecewise polynomial for fast evaluation at any [`Scalar`] type.
#[derive(Clone, Debug)]
pub struct PiecewiseF64 {
    pieces: Vec<(f64, f64, Vec<f64>)>,
}

impl PiecewiseF64 {
    #[inline]
    pub fn eval<T: Scalar>(&self, x: T) -> T {
        for (lo, hi, coeffs) in &self.pieces {
            if x >= T::lit(*lo) && x <= T::lit(*hi) {
                return coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + T::lit(c));
            }
        }
        T::zero()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.pieces.iter().flat_map(|p| [p.0, p.1]).collect();
        b.sort_by(|a, c| a.partial_cmp(c).expect("finite"));
        b.dedup();
        b
    }

    pub fn support(&self) -> (f64, f64) {
        let b = self.breakpoints();
        (b[0], b[b.len() - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_kernel() -> PiecewisePoly {
        PiecewisePoly { pieces: vec![Piece { lo: rat(-1, 2), hi: rat(1, 2), poly: Poly::from_ints(&[(1, 1)]) }] }
    }

    #[test]
    fn box_self_convolution_is_triangle() {
        let tri = box_kernel().self_convolution();
        assert_eq!(tri.eval(&rat(0, 1)), rat(1, 1));
        assert_eq!(tri.eval(&rat(1, 2)), rat(1, 2));
        assert_eq!(tri.eval(&rat(-1, 4)), rat(3, 4));
        assert_eq!(tri.eval(&rat(3, 2)), rat(0, 1));
        assert_eq!(tri.moment(0), rat(1, 1));
        assert_eq!(tri.integral_of_square(), rat(2, 3));
    }

    #[test]
    fn polynomial_arithmetic() {
        let p = Poly::from_ints(&[(1, 1), (1, 1)]);
        assert_eq!(p.pow(3), Poly::from_ints(&[(1, 1), (3, 1), (3, 1), (1, 1)]));
        assert_eq!(p.integral(&rat(0, 1), &rat(2, 1)), rat(4, 1));
        assert_eq!(rational_to_f64(&rat(3, 5)), 0.6);
    }
}

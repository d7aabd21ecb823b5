//! Composite trapezoid rules.
//!
//! Every integrand in this crate is piecewise smooth with known breakpoints
//! and finite (or effectively finite) support, so the composite trapezoid rule
//! applied per smooth segment is accurate enough and fully deterministic.

use crate::scalar::Scalar;

/// Trapezoid rule over equally spaced samples.
pub fn trapezoid<T: Scalar>(values: &[T], step: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        len => {
            let inner: T = values[1..len - 1].iter().copied().sum();
            step * (inner + (values[0] + values[len - 1]) * T::lit(0.5))
        }
    }
}

/// Trapezoid rule over an arbitrary increasing abscissa.
pub fn trapezoid_nonuniform<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) * T::lit(0.5)).sum()
}

/// Integrates `f` over `[a, b]` with equal steps no longer than `max_step`.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(f: F, a: T, b: T, max_step: T) -> T {
    if b <= a {
        return T::zero();
    }
    let segments = ((b - a) / max_step).ceil().to_usize().unwrap_or(1).max(1);
    let step = (b - a) / T::from_usize_lossy(segments);
    let mut inner = T::zero();
    for i in 1..segments {
        inner = inner + f(a + step * T::from_usize_lossy(i));
    }
    step * (inner + (f(a) + f(b)) * T::lit(0.5))
}

/// Integrates `f` over `[breaks.min, breaks.max]`, restarting the rule at every
/// breakpoint so kinks never fall inside a trapezoid.
pub fn integrate_piecewise<T: Scalar, F: Fn(T) -> T>(f: F, breaks: &[T], max_step: T) -> T {
    let mut pts: Vec<T> = breaks.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    pts.dedup();
    pts.windows(2).map(|w| integrate(&f, w[0], w[1], max_step)).sum()
}

//! Scalar root finding on a sign-changing bracket.

use crate::error::{Error, Result};

/// Bisection down to adjacent floating-point numbers (or `max_iter` halvings).
///
/// `f(lo)` and `f(hi)` must have opposite signs (zero is accepted at either end).
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, max_iter: usize) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NoConvergence {
            method: "bisection (no sign change)",
            iterations: 0,
            residual: f_lo.abs().min(f_hi.abs()),
        });
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of [`newton_bisect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub newton_iterations: usize,
    /// Set when Newton stalled and the bracket was finished by bisection.
    pub used_bisection: bool,
}

/// Newton iteration kept inside `[lo, hi]`, falling back to bisection on the
/// bracket when `max_newton` iterations do not reach `rel_tol`.
///
/// `f` returns the value and derivative at a point.
pub fn newton_bisect(
    mut f: impl FnMut(f64) -> (f64, f64),
    lo: f64,
    hi: f64,
    x0: f64,
    rel_tol: f64,
    max_newton: usize,
) -> Result<Root> {
    let (mut a, mut b) = (lo, hi);
    let (fa, _) = f(a);
    let mut x = x0.clamp(lo, hi);
    for it in 0..max_newton {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::NonFinite("newton iteration"));
        }
        if fx == 0.0 {
            return Ok(Root { x, newton_iterations: it, used_bisection: false });
        }
        // shrink the bracket with every evaluation
        if fx.signum() == fa.signum() {
            a = x;
        } else {
            b = x;
        }
        let mut next = x - fx / dfx;
        if !(next.is_finite() && next > a.min(b) && next < a.max(b)) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= rel_tol * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(Root { x: next, newton_iterations: it + 1, used_bisection: false });
        }
        x = next;
    }
    let x = bisect(|y| f(y).0, lo, hi, 2000)?;
    Ok(Root { x, newton_iterations: max_newton, used_bisection: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bisection_requires_sign_change() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 100).is_err());
    }

    #[test]
    fn newton_converges_quadratically() {
        let r = newton_bisect(|x| (x * x * x - 8.0, 3.0 * x * x), 0.0, 10.0, 10.0, 1e-14, 50).unwrap();
        assert!((r.x - 2.0).abs() < 1e-13);
        assert!(!r.used_bisection);
        assert!(r.newton_iterations < 15);
    }

    #[test]
    fn newton_stays_in_bracket_for_flat_start() {
        // derivative vanishes at the start; the step must fall back to bisection
        let r = newton_bisect(|x| (x.powi(3) - 1.0, 3.0 * x * x), 0.0, 4.0, 0.0, 1e-14, 50).unwrap();
        assert!((r.x - 1.0).abs() < 1e-12);
    }
}

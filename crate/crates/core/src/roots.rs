//! Scalar root bracketing and minimization.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Root of a continuous `f` on `[lo, hi]` with `f(lo) < 0 < f(hi)`.
///
/// Illinois-modified regula falsi with a bisection step whenever the bracket
/// fails to halve, so the worst case is no slower than bisection. Stops when
/// the bracket is narrower than `x_tol` or `|f| ≤ f_tol`. Returns the last
/// evaluated point together with its value, or the bracket midpoint.
pub fn bracket_root<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64, f_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut f_lo = f(lo)?;
    let mut f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok((lo, 0.0));
    }
    if f_hi == 0.0 {
        return Ok((hi, 0.0));
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::SolverFailure(format!(
            "root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        )));
    }
    let mut side = 0i8;
    let mut last_width = hi - lo;
    let mut best = (0.5 * (lo + hi), f64::INFINITY);
    for iter in 0..500 {
        let width = hi - lo;
        if width <= x_tol {
            break;
        }
        let regula = lo - f_lo * (hi - lo) / (f_hi - f_lo);
        let use_bisect = iter % 3 == 2 && width > 0.5 * last_width;
        if iter % 3 == 2 {
            last_width = width;
        }
        let mut x = if use_bisect || !regula.is_finite() { 0.5 * (lo + hi) } else { regula };
        if x <= lo || x >= hi {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x)?;
        if fx.abs() < best.1.abs() || best.1.is_infinite() {
            best = (x, fx);
        }
        if fx.abs() <= f_tol {
            return Ok((x, fx));
        }
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let mid = 0.5 * (lo + hi);
    if best.1.is_finite() && (best.0 - mid).abs() <= x_tol {
        Ok(best)
    } else {
        let fm = f(mid)?;
        Ok((mid, fm))
    }
}

/// Golden-section minimization of a unimodal `f` on `[a, b]` down to an
/// interval of width `tol`. Returns `(argmin, min)`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

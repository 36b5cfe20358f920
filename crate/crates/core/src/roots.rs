//! Bracketing root finders shared by the exponent and spectrum solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Final interval of a bisection run. The sign of the target function differs
/// at the two ends (or one end is an exact zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Bisection on `[lo, hi]`. Stops once the interval is narrower than `tol`
/// or can no longer be split in floating point.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<Bracket>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (lo, hi);
    let flo = f(lo);
    let fhi = f(hi);
    if flo.is_nan() || fhi.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "bisection endpoints evaluate to NaN on [{lo}, {hi}]"
        )));
    }
    if flo == 0.0 {
        return Ok(Bracket { lo, hi: lo });
    }
    if fhi == 0.0 {
        return Ok(Bracket { lo: hi, hi });
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::InvalidParameter(format!(
            "no sign change on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    let lo_sign = flo.signum();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(Bracket { lo: mid, hi: mid });
        }
        if fm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Bracket { lo, hi })
}

/// Doubles `hi` until `f(hi)` has the opposite sign of `f(lo)`.
pub fn expand_upper<F>(mut f: F, lo: f64, mut hi: f64, max_doublings: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let s = f(lo).signum();
    for _ in 0..max_doublings {
        let v = f(hi);
        if v == 0.0 || v.signum() != s {
            return Ok(hi);
        }
        hi *= 2.0;
    }
    Err(Error::InvalidParameter(format!(
        "could not bracket a root above {lo} (last upper end {hi})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let b = bisect(|x| x * x - 2.0, 0.0, 2.0, 0.0).unwrap();
        assert!((b.mid() - 2f64.sqrt()).abs() < 1e-15);
        assert!(b.width() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn decreasing_function() {
        let b = bisect(|x| 1.0 - x, 0.0, 3.0, 1e-12).unwrap();
        assert!((b.mid() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_missing_sign_change() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn expansion() {
        let hi = expand_upper(|x| 10.0 - x, 0.0, 1.0, 10).unwrap();
        assert_eq!(hi, 16.0);
    }
}

//! Bracketing root finder.

/// Bisect `f` on `[lo, hi]`, where `f(lo)` and `f(hi)` have opposite signs.
///
/// Stops when `|f(x)| <= f_tol`, when the bracket is narrower than
/// `x_rtol · max(|lo|, |hi|)`, or when the midpoint can no longer be
/// represented between the endpoints. Returns `None` if the endpoints do not
/// bracket a sign change.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, x_rtol: f64, f_tol: f64) -> Option<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Some(lo);
    }
    if f_hi == 0.0 {
        return Some(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return None;
    }
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            // bracket exhausted; report the endpoint with smaller residual
            return Some(if f_lo.abs() <= f(hi).abs() { lo } else { hi });
        }
        let f_mid = f(mid);
        if f_mid.abs() <= f_tol {
            return Some(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= x_rtol * lo.abs().max(hi.abs()) {
            return Some(lo + 0.5 * (hi - lo));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 0.0, 0.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_unbracketed() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0).is_none());
    }

    #[test]
    fn exact_endpoint_root() {
        assert_eq!(bisect(|x| x - 1.0, 1.0, 3.0, 1e-12, 0.0), Some(1.0));
    }

    #[test]
    fn decreasing_function() {
        let r = bisect(|x| 1.0 / x - 0.25, 1.0, 10.0, 1e-14, 0.0).unwrap();
        assert!((r - 4.0).abs() < 1e-12);
    }
}

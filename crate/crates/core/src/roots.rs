//! Scalar root finding.

use crate::error::{KgError, Result};

/// Bisection on `[lo, hi]`. `f(lo)` and `f(hi)` must differ in sign (a zero
/// at either end is accepted). Stops when the bracket is narrower than
/// `xtol` or after `max_iter` halvings.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(KgError::RootNotBracketed { lo, hi });
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid == lo || mid == hi {
            break;
        }
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Safeguarded secant (regula falsi with the Illinois modification).
/// Used as an independent check on [`bisect`].
pub fn illinois<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(KgError::RootNotBracketed { lo: a, hi: b });
    }
    let mut side = 0i8;
    let mut c = b;
    for _ in 0..max_iter {
        c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() <= xtol {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() <= xtol * (1.0 + c.abs()) {
            return Ok(c);
        }
    }
    Ok(c)
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_min<F>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_and_illinois_agree_on_cubic() {
        let f = |x: f64| x * x * x - 2.0 * x - 5.0;
        let r1 = bisect(f, 2.0, 3.0, 1e-14, 200).unwrap();
        let r2 = illinois(f, 2.0, 3.0, 1e-14, 200).unwrap();
        assert!((r1 - 2.0945514815423265).abs() < 1e-12);
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn unbracketed_root_is_reported() {
        let err = bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).unwrap_err();
        assert!(matches!(err, KgError::RootNotBracketed { .. }));
    }

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, fx) = golden_min(|x| (x - 0.3) * (x - 0.3) + 1.0, -2.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-14);
    }
}

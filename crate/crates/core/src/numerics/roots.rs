//! Bracketed root finding for monotone functions.

use crate::error::{MteError, Result};

/// Brent's method on a sign-changing bracket `[a, b]`.
///
/// Stops when the bracket is narrower than `xtol` (absolute, scaled by
/// `max(1, |x|)`) or the residual is exactly zero.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(MteError::Bracket(format!(
            "no sign change on [{a}, {b}] (f = {fa}, {fb})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol * b.abs().max(1.0);
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(MteError::Bracket("Brent iteration limit reached".into()))
}

/// Solve `g(x) = target` for nondecreasing `g`, expanding a bracket outward from
/// `guess` geometrically until it straddles the target.
pub fn invert_monotone<F: FnMut(f64) -> f64>(
    mut g: F,
    target: f64,
    guess: f64,
    step: f64,
    xtol: f64,
) -> Result<f64> {
    let mut h = |x: f64| g(x) - target;
    let mut lo = guess;
    let mut hi = guess;
    let f0 = h(guess);
    if f0 == 0.0 {
        return Ok(guess);
    }
    let mut width = step.abs().max(1e-8);
    if f0 < 0.0 {
        loop {
            hi = lo + width;
            if h(hi) >= 0.0 {
                break;
            }
            lo = hi;
            width *= 2.0;
            if !hi.is_finite() || width > 1e300 {
                return Err(MteError::Bracket(format!("cannot bracket target {target} above")));
            }
        }
    } else {
        loop {
            lo = hi - width;
            if h(lo) <= 0.0 {
                break;
            }
            hi = lo;
            width *= 2.0;
            if !lo.is_finite() || width > 1e300 {
                return Err(MteError::Bracket(format!("cannot bracket target {target} below")));
            }
        }
    }
    brent(h, lo, hi, xtol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_non_bracket() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn invert_expands_bracket() {
        let r = invert_monotone(|x| x.tanh(), 0.999, 0.0, 0.1, 1e-15).unwrap();
        assert!((r - 0.999f64.atanh()).abs() < 1e-12);
        let r = invert_monotone(|x| x.exp(), 1e-6, 5.0, 0.5, 1e-15).unwrap();
        assert!((r - 1e-6f64.ln()).abs() < 1e-12);
    }
}

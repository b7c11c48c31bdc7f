//! Numerical surrogate for Cauchy continuity: a function extends continuously
//! to a limit point only if it maps every Cauchy sequence approaching that
//! point to a Cauchy sequence, and all such image sequences share one limit.

use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};

/// Images of one sequence and whether they look Cauchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyVerdict {
    pub images: Vec<f64>,
    /// `max - min` of the images over the second half of the sequence.
    pub tail_oscillation: f64,
    pub cauchy: bool,
    /// Last image, taken as the limit when the images are Cauchy.
    pub limit: Option<f64>,
}

/// Maps `seq` through `f` and checks that the tail of the images has
/// oscillation at most `tol` (relative to the image size when it exceeds one).
pub fn cauchy_images<T, F: Fn(&T) -> f64>(f: F, seq: &[T], tol: f64) -> CauchyVerdict {
    let images: Vec<f64> = seq.iter().map(&f).collect();
    let tail = &images[images.len() / 2..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let tail_oscillation = if tail.iter().any(|x| !x.is_finite()) {
        f64::INFINITY
    } else {
        hi - lo
    };
    let scale = tail.last().map_or(1.0, |x| x.abs().max(1.0));
    let cauchy = !tail.is_empty() && tail_oscillation <= tol * scale;
    CauchyVerdict {
        limit: if cauchy { tail.last().copied() } else { None },
        images,
        tail_oscillation,
        cauchy,
    }
}

/// Value of the continuous extension of `f` at the common limit of `paths`.
/// Fails when some image sequence is not Cauchy or two limits disagree.
pub fn extend_at<T, F: Fn(&T) -> f64>(f: F, paths: &[Vec<T>], tol: f64) -> Result<f64> {
    let mut limits = Vec::with_capacity(paths.len());
    for p in paths {
        let v = cauchy_images(&f, p, tol);
        match v.limit {
            Some(l) => limits.push(l),
            None => {
                return Err(MteError::ExtensionConsistency {
                    gap: v.tail_oscillation,
                })
            }
        }
    }
    let first = *limits
        .first()
        .ok_or_else(|| MteError::InvalidArgument("no approach paths supplied".into()))?;
    let gap = limits.iter().map(|l| (l - first).abs()).fold(0.0, f64::max);
    if gap > tol * first.abs().max(1.0) {
        return Err(MteError::ExtensionConsistency { gap });
    }
    Ok(first)
}

/// `x_n = 2 / ((2n + 1) pi)`, a Cauchy sequence converging to zero.
pub fn odd_half_pi_sequence(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 2.0 / ((2 * i + 1) as f64 * std::f64::consts::PI))
        .collect()
}

/// Continued-fraction convergents `p/q` of `sqrt(2)`, a rational Cauchy
/// sequence with an irrational limit.
pub fn sqrt2_convergents(n: usize) -> Vec<f64> {
    let (mut p, mut q) = (1u64, 1u64);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(p as f64 / q as f64);
        let np = p + 2 * q;
        q += p;
        p = np;
    }
    out
}

/// Decimal truncations of `x`, a rational sequence converging to `x`.
pub fn decimal_truncations(x: f64, n: usize) -> Vec<f64> {
    (1..=n as i32)
        .map(|d| {
            let s = 10f64.powi(d);
            (x * s).trunc() / s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_inverse_is_not_cauchy_continuous() {
        let v = cauchy_images(|x: &f64| (1.0 / x).sin(), &odd_half_pi_sequence(40), 1e-6);
        assert!(!v.cauchy);
        assert!((v.tail_oscillation - 2.0).abs() < 1e-9);
        assert!(v.images.windows(2).all(|w| ((w[0] - w[1]).abs() - 2.0).abs() < 1e-9));
    }

    #[test]
    fn square_is_cauchy_continuous_on_rationals() {
        let paths = vec![
            sqrt2_convergents(20),
            decimal_truncations(std::f64::consts::SQRT_2, 12),
        ];
        let v = extend_at(|x: &f64| x * x, &paths, 1e-6).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn disagreeing_paths_are_rejected() {
        let left: Vec<f64> = (1..30).map(|n| -1.0 / n as f64).collect();
        let right: Vec<f64> = (1..30).map(|n| 1.0 / n as f64).collect();
        let sign = |x: &f64| if *x < 0.0 { 0.0 } else { 1.0 };
        assert!(matches!(
            extend_at(sign, &[left, right], 1e-6),
            Err(MteError::ExtensionConsistency { .. })
        ));
    }
}

//! Monotone piecewise-cubic interpolation and tabulated distribution functions.

use super::roots::brent;
use crate::error::{MteError, Result};

/// Cubic Hermite interpolant through strictly increasing data, with slopes
/// limited so that the interpolant itself is monotone.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// Interpolant with caller-supplied slopes (e.g. exact densities).
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, mut d: Vec<f64>) -> Result<Self> {
        validate(&x, &y)?;
        if d.len() != x.len() {
            return Err(MteError::Dimension {
                expected: x.len(),
                got: d.len(),
            });
        }
        for v in d.iter_mut() {
            if !v.is_finite() || *v < 0.0 {
                *v = 0.0;
            }
        }
        limit_slopes(&x, &y, &mut d);
        Ok(Self { x, y, d })
    }

    /// Fritsch–Butland (harmonic mean) slopes, the usual PCHIP choice.
    pub fn pchip(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        validate(&x, &y)?;
        let n = x.len();
        let sec: Vec<f64> = (0..n - 1)
            .map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i]))
            .collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = sec[0];
            d[1] = sec[0];
        } else {
            for i in 1..n - 1 {
                let (s0, s1) = (sec[i - 1], sec[i]);
                if s0 > 0.0 && s1 > 0.0 {
                    let h0 = x[i] - x[i - 1];
                    let h1 = x[i + 1] - x[i];
                    let w1 = 2.0 * h1 + h0;
                    let w2 = h1 + 2.0 * h0;
                    d[i] = (w1 + w2) / (w1 / s0 + w2 / s1);
                }
            }
            d[0] = end_slope(x[1] - x[0], x[2] - x[1], sec[0], sec[1]);
            d[n - 1] = end_slope(x[n - 1] - x[n - 2], x[n - 2] - x[n - 3], sec[n - 2], sec[n - 3]);
        }
        Self::with_slopes(x, y, d)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.d
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.x.len() - 2),
        }
    }

    /// Value at `t`, clamped to the end values outside the knot range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.segment(t);
        self.eval_in(i, t)
    }

    fn eval_in(&self, i: usize, t: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// Derivative at `t`; zero outside the knot range.
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t < self.x[0] || t > self.x[n - 1] {
            return 0.0;
        }
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let dh00 = (6.0 * s2 - 6.0 * s) / h;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = (-6.0 * s2 + 6.0 * s) / h;
        let dh11 = 3.0 * s2 - 2.0 * s;
        (dh00 * self.y[i] + dh10 * self.d[i] + dh01 * self.y[i + 1] + dh11 * self.d[i + 1]).max(0.0)
    }

    /// Inverse on `[y_first, y_last]`.
    pub fn invert(&self, target: f64) -> Result<f64> {
        let n = self.y.len();
        if !(target >= self.y[0] && target <= self.y[n - 1]) {
            return Err(MteError::Inversion(format!(
                "target {target} outside [{}, {}]",
                self.y[0],
                self.y[n - 1]
            )));
        }
        let i = match self.y.binary_search_by(|v| v.total_cmp(&target)) {
            Ok(i) => return Ok(self.x[i]),
            Err(i) => i - 1,
        };
        brent(|t| self.eval_in(i, t) - target, self.x[i], self.x[i + 1], 1e-15)
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MteError::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MteError::InvalidArgument(
            "monotone interpolation needs at least two knots".into(),
        ));
    }
    for w in x.windows(2) {
        if !(w[1] > w[0]) {
            return Err(MteError::InvalidArgument("knots must be strictly increasing".into()));
        }
    }
    for w in y.windows(2) {
        if !(w[1] > w[0]) {
            return Err(MteError::InvalidArgument("values must be strictly increasing".into()));
        }
    }
    Ok(())
}

// Fritsch–Carlson sufficient condition: alpha^2 + beta^2 <= 9 on every segment.
fn limit_slopes(x: &[f64], y: &[f64], d: &mut [f64]) {
    for i in 0..x.len() - 1 {
        let sec = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
        let a = d[i] / sec;
        let b = d[i + 1] / sec;
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            d[i] = tau * a * sec;
            d[i + 1] = tau * b * sec;
        }
    }
}

/// A distribution function tabulated on knots, interpolated by a monotone
/// cubic, and continued past the knot range by exponential tails whose rate
/// matches the boundary density.
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    body: MonotoneCubic,
    left_rate: f64,
    right_rate: f64,
}

impl TabulatedCdf {
    pub fn new(body: MonotoneCubic) -> Result<Self> {
        let n = body.x.len();
        let (p0, pn) = (body.y[0], body.y[n - 1]);
        if !(p0 >= 0.0 && pn <= 1.0) {
            return Err(MteError::InvalidLaw(format!(
                "tabulated CDF values must lie in [0, 1], got [{p0}, {pn}]"
            )));
        }
        let left_rate = if p0 > 0.0 && body.d[0] > 0.0 {
            body.d[0] / p0
        } else {
            f64::INFINITY
        };
        let right_rate = if pn < 1.0 && body.d[n - 1] > 0.0 {
            body.d[n - 1] / (1.0 - pn)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            body,
            left_rate,
            right_rate,
        })
    }

    pub fn knots(&self) -> &MonotoneCubic {
        &self.body
    }

    fn first(&self) -> (f64, f64) {
        (self.body.x[0], self.body.y[0])
    }

    fn last(&self) -> (f64, f64) {
        let n = self.body.x.len();
        (self.body.x[n - 1], self.body.y[n - 1])
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let (x0, p0) = self.first();
        let (xn, pn) = self.last();
        if t < x0 {
            if self.left_rate.is_infinite() {
                return 0.0;
            }
            return p0 * (self.left_rate * (t - x0)).exp();
        }
        if t > xn {
            if self.right_rate.is_infinite() {
                return 1.0;
            }
            return 1.0 - (1.0 - pn) * (-self.right_rate * (t - xn)).exp();
        }
        self.body.eval(t)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        let (x0, _) = self.first();
        let (xn, _) = self.last();
        if t < x0 {
            if self.left_rate.is_infinite() {
                return 0.0;
            }
            return self.left_rate * self.cdf(t);
        }
        if t > xn {
            if self.right_rate.is_infinite() {
                return 0.0;
            }
            return self.right_rate * (1.0 - self.cdf(t));
        }
        self.body.derivative(t)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        let (x0, p0) = self.first();
        let (xn, pn) = self.last();
        if p < p0 {
            if self.left_rate.is_infinite() {
                return Ok(x0);
            }
            return Ok(x0 + (p / p0).ln() / self.left_rate);
        }
        if p > pn {
            if self.right_rate.is_infinite() {
                return Ok(xn);
            }
            return Ok(xn - ((1.0 - p) / (1.0 - pn)).ln() / self.right_rate);
        }
        self.body.invert(p)
    }

    /// Lowest and highest knot.
    pub fn knot_range(&self) -> (f64, f64) {
        (self.first().0, self.last().0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pchip_reproduces_linear_data() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = MonotoneCubic::pchip(x, y).unwrap();
        assert!((m.eval(2.3) - 5.6).abs() < 1e-12);
        assert!((m.derivative(3.7) - 2.0).abs() < 1e-12);
        assert!((m.invert(7.4).unwrap() - 3.2).abs() < 1e-12);
    }

    #[test]
    fn limiter_keeps_interpolant_monotone() {
        let x = vec![0.0, 1.0, 2.0];
        let y = vec![0.0, 0.01, 1.0];
        let m = MonotoneCubic::with_slopes(x, y, vec![5.0, 5.0, 5.0]).unwrap();
        let mut prev = -1.0;
        for i in 0..=2000 {
            let v = m.eval(i as f64 / 1000.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn rejects_non_increasing_values() {
        assert!(MonotoneCubic::pchip(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 0.5]).is_err());
        assert!(MonotoneCubic::pchip(vec![0.0, 0.0], vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn tabulated_tails_are_continuous_and_invertible() {
        let x = vec![-1.0, 0.0, 1.0];
        let y = vec![0.2, 0.5, 0.8];
        let body = MonotoneCubic::with_slopes(x, y, vec![0.3, 0.3, 0.3]).unwrap();
        let cdf = TabulatedCdf::new(body).unwrap();
        assert!((cdf.cdf(-1.0 - 1e-12) - 0.2).abs() < 1e-10);
        assert!((cdf.cdf(1.0 + 1e-12) - 0.8).abs() < 1e-10);
        for &p in &[0.01, 0.1, 0.35, 0.5, 0.77, 0.95, 0.999] {
            let q = cdf.quantile(p).unwrap();
            assert!((cdf.cdf(q) - p).abs() < 1e-13, "p={p}");
        }
    }
}

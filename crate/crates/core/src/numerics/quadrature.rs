//! Gauss–Legendre and Gauss–Kronrod rules.
//!
//! Two families are used by the rest of the crate. Fixed Gauss–Legendre rules
//! (optionally composed with a `sinh` change of variables for unbounded
//! integrands) give integrals that vary smoothly with their limits, which is
//! what finite differencing of an integral in its limit needs. Adaptive
//! Gauss–Kronrod (7/15) is used where a single very accurate number is wanted.

use crate::error::{MteError, Result};

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        if a == b {
            return 0.0;
        }
        let mut terms: Vec<f64> = self.mapped(a, b).map(|(x, w)| w * f(x)).collect();
        super::pairwise_sum(&mut terms)
    }

    /// Composite rule over `panels` equal sub-intervals of `[a, b]`.
    pub fn integrate_composite<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: F,
    ) -> f64 {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut parts: Vec<f64> = (0..panels)
            .map(|p| {
                let lo = a + h * p as f64;
                self.integrate(lo, lo + h, &mut f)
            })
            .collect();
        super::pairwise_sum(&mut parts)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Change of variables `u = center + scale * sinh(w)`.
///
/// Gauss–Legendre in `w` concentrates nodes near `center` while still reaching
/// far into the tails, which suits densities with unbounded support.
#[derive(Debug, Clone, Copy)]
pub struct SinhMap {
    pub center: f64,
    pub scale: f64,
}

impl SinhMap {
    pub fn new(center: f64, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "sinh map scale must be positive");
        Self { center, scale }
    }

    pub fn to_w(&self, u: f64) -> f64 {
        ((u - self.center) / self.scale).asinh()
    }

    pub fn to_u(&self, w: f64) -> f64 {
        self.center + self.scale * w.sinh()
    }

    /// Nodes `(u, weight)` of `rule` covering `[a, b]` in the original variable,
    /// Jacobian included. Empty when `a >= b`.
    pub fn nodes(&self, rule: &GaussLegendre, a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
        out.clear();
        if !(a < b) {
            return;
        }
        let (wa, wb) = (self.to_w(a), self.to_w(b));
        for (w, wt) in rule.mapped(wa, wb) {
            out.push((self.to_u(w), wt * self.scale * w.cosh()));
        }
    }
}

// Kronrod 15-point abscissae and weights with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Globally adaptive Gauss–Kronrod integration on a finite interval.
pub fn adaptive_gk<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(Estimate {
                value: total,
                error: err,
                evaluations,
            });
        }
        if intervals.len() >= max_intervals {
            return Err(MteError::Quadrature {
                oscillation: err,
                tolerance: abs_tol.max(rel_tol * total.abs()),
            });
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty interval list");
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // Interval cannot be split further in floating point.
            let total: f64 = intervals.iter().map(|iv| iv.2).sum();
            return Ok(Estimate {
                value: total,
                error: err,
                evaluations,
            });
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(6);
        // Exact up to degree 11.
        let v = rule.integrate(-1.0, 2.0, |x| x.powi(11) - 3.0 * x.powi(4));
        let exact = (2f64.powi(12) - 1.0) / 12.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
        let total: f64 = rule.mapped(-1.0, 1.0).map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_rule_has_centre_node() {
        let rule = GaussLegendre::new(5);
        let v = rule.integrate(0.0, 1.0, |x| x.powi(9));
        assert!((v - 0.1).abs() < 1e-14);
    }

    #[test]
    fn sinh_rule_integrates_gaussian_density() {
        let rule = GaussLegendre::new(48);
        let map = SinhMap::new(0.3, 1.0);
        let mut nodes = Vec::new();
        map.nodes(&rule, -12.0, 12.0, &mut nodes);
        let v: f64 = nodes
            .iter()
            .map(|&(u, w)| w * (-(u - 0.3) * (u - 0.3) / 2.0).exp())
            .sum();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let est = adaptive_gk(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 1e-12, 2000).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{est:?}");
    }

    #[test]
    fn adaptive_reports_failure_when_budget_exhausted() {
        let r = adaptive_gk(|x| (1.0 / x).sin(), 1e-8, 1.0, 1e-14, 0.0, 4);
        assert!(matches!(r, Err(MteError::Quadrature { .. })));
    }
}

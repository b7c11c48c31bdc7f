//! Independent oracles for Gaussian error scenarios, written without the
//! library's numerics.

#![allow(dead_code)]

pub mod frozen;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_inv(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Independent Gaussian errors `U_t ~ N(mean_t, sd_t^2)` with baseline `k`;
/// `X_i = U_k - U_i` and `V_i = Phi((X_i - mu_i) / sigma_i)`.
#[derive(Debug, Clone)]
pub struct GaussErrors {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub k: usize,
}

impl GaussErrors {
    pub fn new(mean: &[f64], sd: &[f64], k: usize) -> Self {
        Self {
            mean: mean.to_vec(),
            sd: sd.to_vec(),
            k,
        }
    }

    pub fn others(&self) -> Vec<usize> {
        (0..self.mean.len()).filter(|&i| i != self.k).collect()
    }

    /// Mean and standard deviation of `X_i`.
    pub fn diff(&self, i: usize) -> (f64, f64) {
        let k = self.k;
        (self.mean[k] - self.mean[i], self.sd[k].hypot(self.sd[i]))
    }

    /// Threshold `Q_i` for utility gap `r_k - r_i`.
    pub fn threshold(&self, i: usize, gap: f64) -> f64 {
        let (m, s) = self.diff(i);
        phi((gap - m) / s)
    }

    /// Mean and variance of `X_a` given `X_j = x`.
    fn conditional(&self, a: usize, j: usize, x: f64) -> (f64, f64) {
        let (ma, sa) = self.diff(a);
        let (mj, sj) = self.diff(j);
        let c = self.sd[self.k].powi(2);
        (ma + c / (sj * sj) * (x - mj), sa * sa - c * c / (sj * sj))
    }

    /// `E[V_a | V_j = q]` in closed form.
    pub fn cond_mean_v(&self, a: usize, j: usize, q: f64) -> f64 {
        if a == j {
            return q;
        }
        let (mj, sj) = self.diff(j);
        let x = mj + sj * phi_inv(q);
        let (m, v) = self.conditional(a, j, x);
        let (ma, sa) = self.diff(a);
        phi((m - ma) / (sa * sa + v).sqrt())
    }

    /// `P(V_a <= y | V_j = q)`.
    pub fn cond_cdf_v(&self, a: usize, j: usize, q: f64, y: f64) -> f64 {
        let (mj, sj) = self.diff(j);
        let x = mj + sj * phi_inv(q);
        let (m, v) = self.conditional(a, j, x);
        let (ma, sa) = self.diff(a);
        phi((ma + sa * phi_inv(y) - m) / v.sqrt())
    }

    /// `V_a` given `V_j = q`, written through a standard normal variate `t`.
    pub fn cond_v_at(&self, a: usize, j: usize, q: f64, t: f64) -> f64 {
        let (mj, sj) = self.diff(j);
        let (m, v) = self.conditional(a, j, mj + sj * phi_inv(q));
        let (ma, sa) = self.diff(a);
        phi((m + v.sqrt() * t - ma) / sa)
    }

    /// `P(V_i <= q_i for all i)` by integrating over `U_k`.
    pub fn joint_cdf(&self, q: &[f64]) -> f64 {
        let k = self.k;
        let others = self.others();
        let xs: Vec<f64> = others
            .iter()
            .zip(q)
            .map(|(&i, &qi)| {
                let (m, s) = self.diff(i);
                if qi >= 1.0 {
                    f64::INFINITY
                } else {
                    m + s * phi_inv(qi)
                }
            })
            .collect();
        let (mk, sk) = (self.mean[k], self.sd[k]);
        let f = |t: f64| {
            let u = mk + sk * t;
            let dens = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
            others.iter().zip(&xs).fold(dens, |acc, (&i, &x)| {
                if x.is_infinite() {
                    acc
                } else {
                    acc * (1.0 - phi((u - x - self.mean[i]) / self.sd[i]))
                }
            })
        };
        simpson(f, -12.0, 12.0, 6000)
    }

    /// Draws `u` with an independent generator.
    pub fn sampler(&self, seed: u64) -> impl FnMut() -> Vec<f64> + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals: Vec<Normal<f64>> = self
            .mean
            .iter()
            .zip(&self.sd)
            .map(|(&m, &s)| Normal::new(m, s).unwrap())
            .collect();
        move || normals.iter().map(|n| n.sample(&mut rng)).collect()
    }

    /// `V` indexed by treatment (baseline slot NaN).
    pub fn v(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|i| {
                if i == self.k {
                    f64::NAN
                } else {
                    let (m, s) = self.diff(i);
                    phi((u[self.k] - u[i] - m) / s)
                }
            })
            .collect()
    }
}

/// Linear outcome mean `c0 + sum c_i v_i` with coefficients by treatment index.
#[derive(Debug, Clone)]
pub struct Linear {
    pub intercept: f64,
    pub coef: Vec<(usize, f64)>,
}

impl Linear {
    pub fn new(intercept: f64, coef: &[(usize, f64)]) -> Self {
        Self {
            intercept,
            coef: coef.to_vec(),
        }
    }

    /// `E[Y | V_j = q]`.
    pub fn cond_mean(&self, e: &GaussErrors, j: usize, q: f64) -> f64 {
        self.intercept + self.coef.iter().map(|&(i, c)| c * e.cond_mean_v(i, j, q)).sum::<f64>()
    }
}

/// Errors of the bundled figure1 scenario (variances 0.5, 1, 1).
pub fn figure1_errors() -> GaussErrors {
    GaussErrors::new(&[0.0, 1.0, -1.0], &[0.5f64.sqrt(), 1.0, 1.0], 1)
}

/// Errors of the bundled gaussian_linear scenario (variances 1, 1, 2.25).
pub fn gaussian_linear_errors() -> GaussErrors {
    GaussErrors::new(&[0.0, 0.5, -0.5], &[1.0, 1.0, 1.5], 1)
}

/// Errors of the bundled k4_general scenario (variances 1, 0.8, 1.2, 1).
pub fn k4_errors() -> GaussErrors {
    GaussErrors::new(&[0.0, 0.3, -0.2, 0.1], &[1.0, 0.8f64.sqrt(), 1.2f64.sqrt(), 1.0], 1)
}

/// Sample mean and standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

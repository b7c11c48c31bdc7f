//! Product-kernel local polynomial regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};

/// Gaussian weights are cut at this many bandwidths (weight below 2e-8).
pub const GAUSSIAN_CUTOFF: f64 = 6.0;

/// Rows per block of a parallel kernel sum.
const BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Epanechnikov,
    Gaussian,
}

impl KernelKind {
    /// Kernel weight scaled to one at the origin.
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Self::Epanechnikov if u.abs() < 1.0 => 1.0 - u * u,
            Self::Gaussian if u.abs() < GAUSSIAN_CUTOFF => (-0.5 * u * u).exp(),
            _ => 0.0,
        }
    }

    /// Half-width of the support in bandwidth units.
    pub fn radius(self) -> f64 {
        match self {
            Self::Epanechnikov => 1.0,
            Self::Gaussian => GAUSSIAN_CUTOFF,
        }
    }

    /// Ratio of canonical bandwidths relative to the Gaussian kernel.
    fn canonical_factor(self) -> f64 {
        match self {
            Self::Epanechnikov => 2.214,
            Self::Gaussian => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Normal-reference rule per dimension with a robust spread.
    #[default]
    Silverman,
    /// The same bandwidth in every dimension.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel: KernelKind,
    pub bandwidth: BandwidthRule,
    /// Local polynomial order, 0 (local constant) or 1 (local linear).
    pub order: u8,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Epanechnikov,
            bandwidth: BandwidthRule::Silverman,
            order: 1,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order > 1 {
            return Err(MteError::InvalidArgument(format!(
                "local polynomial order must be 0 or 1, got {}",
                self.order
            )));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(MteError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }

    /// Bandwidth for each column, at the rate suited to regression levels.
    pub fn bandwidths(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.bandwidths_at_rate(columns, 4.0)
    }

    /// Wider bandwidths at the rate suited to first derivatives.
    pub fn derivative_bandwidths(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.bandwidths_at_rate(columns, 6.0)
    }

    fn bandwidths_at_rate(&self, columns: &[Vec<f64>], rate: f64) -> Result<Vec<f64>> {
        self.validate()?;
        match self.bandwidth {
            BandwidthRule::Fixed(h) => Ok(vec![h; columns.len()]),
            BandwidthRule::Silverman => {
                let d = columns.len() as f64;
                columns
                    .iter()
                    .map(|c| {
                        let n = c.len() as f64;
                        let s = robust_spread(c);
                        if !(s > 0.0 && s.is_finite()) {
                            return Err(MteError::InvalidArgument(
                                "bandwidth rule needs a column with positive spread".into(),
                            ));
                        }
                        Ok(self.kernel.canonical_factor() * s * (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + rate)))
                    })
                    .collect()
            }
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (pos - i as f64) * (sorted[i + 1] - sorted[i])
}

/// `min(sd, IQR / 1.349)`, falling back to the standard deviation when the
/// interquartile range vanishes.
pub fn robust_spread(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = (sorted_quantile(&s, 0.75) - sorted_quantile(&s, 0.25)) / 1.349;
    if iqr > 0.0 {
        sd.min(iqr)
    } else {
        sd
    }
}

/// Weighted least-squares fit around one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    /// Per response: value at the point, then slopes per regressor (original units).
    pub coefficients: Vec<Vec<f64>>,
    /// Per response: row-major sandwich covariance of the coefficients, when requested.
    pub covariances: Option<Vec<Vec<f64>>>,
    /// Sum of kernel weights scaled to one at the origin.
    pub effective: f64,
}

impl LocalFit {
    /// Standard error of `sum_c w_c beta_c` for response `o`.
    pub fn combination_se(&self, o: usize, w: &[f64]) -> Option<f64> {
        let cov = &self.covariances.as_ref()?[o];
        let p = w.len();
        let mut v = 0.0;
        for s in 0..p {
            for t in 0..p {
                v += w[s] * cov[s * p + t] * w[t];
            }
        }
        Some(v.max(0.0).sqrt())
    }

    pub fn standard_error(&self, o: usize, c: usize) -> Option<f64> {
        let p = self.coefficients[o].len();
        let mut w = vec![0.0; p];
        w[c] = 1.0;
        self.combination_se(o, &w)
    }
}

/// A local polynomial problem: regressors and responses of each row.
pub struct LocalProblem<'a> {
    pub regressors: &'a (dyn Fn(usize, &mut [f64]) + Sync),
    pub responses: &'a (dyn Fn(usize, &mut [f64]) + Sync),
    pub dim: usize,
    pub outputs: usize,
    /// Products of regressor pairs added to a local linear design.
    pub interactions: &'a [(usize, usize)],
}

struct Accum {
    sw: f64,
    xtx: Vec<f64>,
    xty: Vec<f64>,
}

impl<'a> LocalProblem<'a> {
    fn design(&self, i: usize, x0: &[f64], h: &[f64], order: u8, x: &mut [f64], row: &mut [f64]) {
        (self.regressors)(i, x);
        row[0] = 1.0;
        if order == 1 {
            for d in 0..self.dim {
                row[d + 1] = (x[d] - x0[d]) / h[d];
            }
            for (c, &(a, b)) in self.interactions.iter().enumerate() {
                row[self.dim + 1 + c] = row[a + 1] * row[b + 1];
            }
        }
    }

    fn columns(&self, order: u8) -> usize {
        if order == 1 {
            1 + self.dim + self.interactions.len()
        } else {
            1
        }
    }

    /// Factor turning a scaled coefficient into original units.
    fn unscale(&self, c: usize, h: &[f64]) -> f64 {
        if c == 0 {
            1.0
        } else if c <= self.dim {
            h[c - 1]
        } else {
            let (a, b) = self.interactions[c - 1 - self.dim];
            h[a] * h[b]
        }
    }

    fn weight(&self, i: usize, x0: &[f64], h: &[f64], kernel: KernelKind, x: &mut [f64]) -> f64 {
        (self.regressors)(i, x);
        let mut w = 1.0;
        for d in 0..self.dim {
            w *= kernel.weight((x[d] - x0[d]) / h[d]);
            if w == 0.0 {
                break;
            }
        }
        w
    }

    /// Fits over `rows` at `x0`. Fails with a sparse-region error when the
    /// effective count is below `min_effective`.
    pub fn fit(
        &self,
        rows: &[usize],
        x0: &[f64],
        h: &[f64],
        spec: &KernelSpec,
        min_effective: f64,
        with_se: bool,
    ) -> Result<LocalFit> {
        let p = self.columns(spec.order);
        let r = self.outputs;
        let parts: Vec<Accum> = rows
            .par_chunks(BLOCK)
            .map(|block| {
                let mut a = Accum {
                    sw: 0.0,
                    xtx: vec![0.0; p * p],
                    xty: vec![0.0; p * r],
                };
                let mut x = vec![0.0; self.dim];
                let mut row = vec![0.0; p];
                let mut y = vec![0.0; r];
                for &i in block {
                    let w = self.weight(i, x0, h, spec.kernel, &mut x);
                    if w == 0.0 {
                        continue;
                    }
                    self.design(i, x0, h, spec.order, &mut x, &mut row);
                    (self.responses)(i, &mut y);
                    a.sw += w;
                    for s in 0..p {
                        for t in 0..p {
                            a.xtx[s * p + t] += w * row[s] * row[t];
                        }
                        for o in 0..r {
                            a.xty[s * r + o] += w * row[s] * y[o];
                        }
                    }
                }
                a
            })
            .collect();
        let mut total = Accum {
            sw: 0.0,
            xtx: vec![0.0; p * p],
            xty: vec![0.0; p * r],
        };
        for a in parts {
            total.sw += a.sw;
            total.xtx.iter_mut().zip(&a.xtx).for_each(|(t, v)| *t += v);
            total.xty.iter_mut().zip(&a.xty).for_each(|(t, v)| *t += v);
        }
        if !(total.sw >= min_effective) {
            return Err(MteError::SparseRegion {
                effective: total.sw,
                required: min_effective,
            });
        }
        let xtx = DMatrix::from_row_slice(p, p, &total.xtx);
        let xty = DMatrix::from_row_slice(p, r, &total.xty);
        let inv = xtx.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite())).ok_or(
            MteError::SparseRegion {
                effective: total.sw,
                required: min_effective,
            },
        )?;
        let beta = &inv * xty;
        let coefficients: Vec<Vec<f64>> = (0..r)
            .map(|o| (0..p).map(|c| beta[(c, o)] / self.unscale(c, h)).collect())
            .collect();
        let covariances = if with_se {
            Some(self.sandwich(rows, x0, h, spec, &inv, &beta)?)
        } else {
            None
        };
        Ok(LocalFit {
            coefficients,
            covariances,
            effective: total.sw,
        })
    }

    fn sandwich(
        &self,
        rows: &[usize],
        x0: &[f64],
        h: &[f64],
        spec: &KernelSpec,
        inv: &DMatrix<f64>,
        beta: &DMatrix<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let p = inv.nrows();
        let r = self.outputs;
        let parts: Vec<Vec<f64>> = rows
            .par_chunks(BLOCK)
            .map(|block| {
                let mut meat = vec![0.0; r * p * p];
                let mut x = vec![0.0; self.dim];
                let mut row = vec![0.0; p];
                let mut y = vec![0.0; r];
                for &i in block {
                    let w = self.weight(i, x0, h, spec.kernel, &mut x);
                    if w == 0.0 {
                        continue;
                    }
                    self.design(i, x0, h, spec.order, &mut x, &mut row);
                    (self.responses)(i, &mut y);
                    for o in 0..r {
                        let fitted: f64 = (0..p).map(|c| row[c] * beta[(c, o)]).sum();
                        let e2 = (w * (y[o] - fitted)).powi(2);
                        for s in 0..p {
                            for t in 0..p {
                                meat[(o * p + s) * p + t] += e2 * row[s] * row[t];
                            }
                        }
                    }
                }
                meat
            })
            .collect();
        let mut meat = vec![0.0; r * p * p];
        for m in parts {
            meat.iter_mut().zip(&m).for_each(|(t, v)| *t += v);
        }
        Ok((0..r)
            .map(|o| {
                let m = DMatrix::from_row_slice(p, p, &meat[o * p * p..(o + 1) * p * p]);
                let v = inv * m * inv;
                let mut out = vec![0.0; p * p];
                for s in 0..p {
                    for t in 0..p {
                        out[s * p + t] = v[(s, t)] / (self.unscale(s, h) * self.unscale(t, h));
                    }
                }
                out
            })
            .collect())
    }
}

/// Solves a small dense least-squares problem `min |A x - b|`.
pub fn least_squares(rows: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = rows.first()?.len();
    let a = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let svd = a.svd(true, true);
    let x = svd.solve(&DVector::from_column_slice(b), 1e-12).ok()?;
    Some(x.iter().copied().collect())
}

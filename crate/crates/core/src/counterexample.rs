//! The three pairwise-threshold vector `(V_{0,1}, V_{0,2}, V_{1,2})` of a
//! three-treatment model and the degeneracy of its support.
//!
//! Since `U_0 - U_1 = (U_0 - U_2) - (U_1 - U_2)`, the quantile transforms of
//! the three coordinates satisfy a linear identity, so the vector lives on a
//! two-dimensional surface inside the unit cube.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{difference_law, DifferenceLaw, ErrorVectorLaw};
use crate::error::{MteError, Result};
use crate::numerics::stream_rng;
use crate::selection::CHUNK;

/// Grid widths used for the occupied-volume report.
pub const EPSILONS: [f64; 3] = [0.1, 0.05, 0.025];

/// Points per cloud in the occupied-volume report.
pub const VOLUME_DRAWS: usize = 500_000;

/// A point `(V_{0,1}, V_{0,2}, V_{1,2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsVector {
    pub v01: f64,
    pub v02: f64,
    pub v12: f64,
}

/// The three pairwise difference laws of a three-component error vector.
#[derive(Debug, Clone)]
pub struct PairwiseLaws {
    f01: DifferenceLaw,
    f02: DifferenceLaw,
    f12: DifferenceLaw,
}

impl PairwiseLaws {
    pub fn new(errors: &ErrorVectorLaw, seed: u64) -> Result<Self> {
        if errors.dim() != 3 {
            return Err(MteError::Dimension {
                expected: 3,
                got: errors.dim(),
            });
        }
        Ok(Self {
            f01: difference_law(errors, 0, 1, seed)?,
            f02: difference_law(errors, 0, 2, seed)?,
            f12: difference_law(errors, 1, 2, seed)?,
        })
    }

    /// CDF transforms of the three pairwise differences of `u`.
    pub fn ls_vector(&self, u: &[f64]) -> Result<LsVector> {
        if u.len() != 3 {
            return Err(MteError::Dimension {
                expected: 3,
                got: u.len(),
            });
        }
        Ok(LsVector {
            v01: self.f01.cdf(u[0] - u[1]),
            v02: self.f02.cdf(u[0] - u[2]),
            v12: self.f12.cdf(u[1] - u[2]),
        })
    }

    /// `F_{0,1}^{-1}(V_{0,1}) - (F_{0,2}^{-1}(V_{0,2}) - F_{1,2}^{-1}(V_{1,2}))`.
    pub fn residual(&self, p: &LsVector) -> Result<f64> {
        let a = self.f01.quantile(p.v01)?;
        let b = self.f02.quantile(p.v02)?;
        let c = self.f12.quantile(p.v12)?;
        Ok(a - (b - c))
    }
}

/// Convenience wrapper building the laws for a single vector.
pub fn ls_vector(errors: &ErrorVectorLaw, u: &[f64]) -> Result<LsVector> {
    PairwiseLaws::new(errors, 0)?.ls_vector(u)
}

/// Sampled cloud with its summary statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportCloud {
    pub points: Vec<LsVector>,
    pub max_residual: f64,
    /// Fraction of cells of the 0.05-grid holding at least one point.
    pub occupied_fraction: f64,
}

fn sample_cloud(laws: &PairwiseLaws, errors: &ErrorVectorLaw, n: usize, seed: u64) -> Result<Vec<(LsVector, f64)>> {
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<(LsVector, f64)>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut u = [0.0; 3];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                errors.sample_into(&mut rng, &mut u)?;
                let p = laws.ls_vector(&u)?;
                let r = laws.residual(&p)?;
                out.push((p, r.abs()));
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(n);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

/// Samples `n` vectors and summarises the residual and grid occupancy.
pub fn support_cloud(errors: &ErrorVectorLaw, n: usize, seed: u64) -> Result<SupportCloud> {
    if n == 0 {
        return Err(MteError::InvalidArgument("support cloud needs n >= 1".into()));
    }
    let laws = PairwiseLaws::new(errors, seed)?;
    let sampled = sample_cloud(&laws, errors, n, seed)?;
    let max_residual = sampled.iter().map(|s| s.1).fold(0.0, f64::max);
    let points: Vec<LsVector> = sampled.into_iter().map(|s| s.0).collect();
    let occupied_fraction = occupied_volume(&points, 0.05);
    Ok(SupportCloud {
        points,
        max_residual,
        occupied_fraction,
    })
}

/// Fraction of the `eps`-grid cells of the unit cube that hold a point.
pub fn occupied_volume(points: &[LsVector], eps: f64) -> f64 {
    let m = (1.0 / eps).round() as i64;
    let cell = |x: f64| ((x * m as f64).floor() as i64).clamp(0, m - 1);
    let cells: HashSet<(i64, i64, i64)> = points
        .iter()
        .map(|p| (cell(p.v01), cell(p.v02), cell(p.v12)))
        .collect();
    cells.len() as f64 / (m * m * m) as f64
}

/// Independent uniform cloud on the unit cube, the full-support control.
pub fn uniform_cloud(n: usize, seed: u64) -> Vec<LsVector> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| LsVector {
                    v01: rng.random(),
                    v02: rng.random(),
                    v12: rng.random(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Occupied-volume evidence that the support is Lebesgue-null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub draws: usize,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub volumes: Vec<f64>,
    pub control_volumes: Vec<f64>,
    pub max_residual: f64,
    pub verdict: String,
    pub null_support: bool,
}

/// Volumes shrink geometrically with `eps` for a surface and stay near one for
/// full support. The support is declared null when every step shrinks the
/// volume by at least a quarter and the last volume is below 0.2.
pub fn violation_verdict(volumes: &[f64]) -> bool {
    volumes.windows(2).all(|w| w[1] < 0.75 * w[0]) && volumes.last().is_some_and(|&v| v < 0.2)
}

pub fn assumption32_violation_report(errors: &ErrorVectorLaw, n: usize, seed: u64) -> Result<ViolationReport> {
    if n == 0 {
        return Err(MteError::InvalidArgument("violation report needs n >= 1".into()));
    }
    let laws = PairwiseLaws::new(errors, seed)?;
    let sampled = sample_cloud(&laws, errors, n, seed)?;
    let max_residual = sampled.iter().map(|s| s.1).fold(0.0, f64::max);
    let points: Vec<LsVector> = sampled.into_iter().map(|s| s.0).collect();
    let control = uniform_cloud(n, seed ^ 0x9e37_79b9_7f4a_7c15);
    let volumes: Vec<f64> = EPSILONS.iter().map(|&e| occupied_volume(&points, e)).collect();
    let control_volumes: Vec<f64> = EPSILONS.iter().map(|&e| occupied_volume(&control, e)).collect();
    let null_support = violation_verdict(&volumes);
    let verdict = if null_support {
        "support is Lebesgue-null in [0,1]^3: occupied volume vanishes as the grid is refined"
    } else {
        "inconclusive: occupied volume does not vanish along the grid sequence"
    }
    .to_string();
    Ok(ViolationReport {
        draws: n,
        seed,
        epsilons: EPSILONS.to_vec(),
        volumes,
        control_volumes,
        max_residual,
        verdict,
        null_support,
    })
}

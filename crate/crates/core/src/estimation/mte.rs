//! Sample MTE: local slopes of `E[G(Y) 1{D = t} | Q]` in the contrast
//! coordinate, one bandwidth inside the boundary and extrapolated to it.

use serde::{Deserialize, Serialize};

use super::kernel::{KernelSpec, LocalProblem};
use super::thresholds::ObservationThresholds;
use super::SampleSet;
use crate::error::{MteError, Result};
use crate::population::{BoundaryPoint, IdentificationReport};
use crate::selection::{GFunction, Scenario};

/// Smallest effective sample accepted near the boundary.
pub const MIN_BOUNDARY_EFFECTIVE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSlope {
    pub treatment: usize,
    /// Sign-adjusted slope extrapolated to the boundary, an estimate of
    /// `E[G(Y_t) | V_j = q*]`.
    pub value: f64,
    pub se: f64,
    /// Sign-adjusted slope at the offset evaluation point.
    pub offset_value: f64,
    pub offset_se: f64,
    pub effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MteEstimate {
    pub qstar: f64,
    pub contrast: usize,
    /// Evaluation point in threshold space (slot order).
    pub point: Vec<f64>,
    /// Distance of the pinned coordinates from one, per slot (zero for the contrast).
    pub offset: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub baseline: BranchSlope,
    pub contrast_branch: BranchSlope,
    pub mte: f64,
    pub se: f64,
    /// MTE from the slopes at the offset point, without extrapolation.
    pub offset_mte: f64,
}

impl MteEstimate {
    /// Comparison with a population value.
    pub fn report(&self, population: f64) -> IdentificationReport {
        IdentificationReport::new(self.mte, population, self.se, Vec::new())
    }
}

/// Local MTE estimate at `boundary` from per-observation thresholds. The
/// local design is linear plus products of the contrast coordinate with each
/// pinned coordinate, so the contrast slope can be carried from the offset
/// point to the boundary.
pub fn estimate_mte(
    sample: &SampleSet,
    scenario: &Scenario,
    g: &GFunction,
    boundary: &BoundaryPoint,
    spec: &KernelSpec,
    thresholds: &ObservationThresholds,
) -> Result<MteEstimate> {
    sample.check_shares()?;
    let k = scenario.baseline();
    let j = boundary.contrast;
    let sj = scenario.slot(j)?;
    let dim = scenario.treatments() - 1;
    if thresholds.values.len() != dim || thresholds.values.iter().any(|v| v.len() != sample.len()) {
        return Err(MteError::Dimension {
            expected: dim,
            got: thresholds.values.len(),
        });
    }
    let spec = KernelSpec { order: 1, ..*spec };
    let bandwidths = spec.derivative_bandwidths(&thresholds.values)?;
    let offset: Vec<f64> = (0..dim).map(|s| if s == sj { 0.0 } else { bandwidths[s] }).collect();
    let point: Vec<f64> = (0..dim).map(|s| if s == sj { boundary.qstar } else { 1.0 - offset[s] }).collect();
    let pinned: Vec<usize> = (0..dim).filter(|&s| s != sj).collect();
    let interactions: Vec<(usize, usize)> = pinned.iter().map(|&s| (sj, s)).collect();
    // slope in q_j at the offset point, and carried to q_other = 1
    let mut at_offset = vec![0.0; 1 + dim + interactions.len()];
    at_offset[1 + sj] = 1.0;
    let mut at_boundary = at_offset.clone();
    for (c, &s) in pinned.iter().enumerate() {
        at_boundary[1 + dim + c] = offset[s];
    }
    let reg = |i: usize, out: &mut [f64]| {
        for (o, col) in out.iter_mut().zip(&thresholds.values) {
            *o = col[i];
        }
    };
    let rows: Vec<usize> = (0..sample.len()).collect();
    let branch = |t: usize, sign: f64| -> Result<BranchSlope> {
        let resp = |i: usize, out: &mut [f64]| {
            out[0] = if sample.d[i] == t { g.apply(sample.y[i]) } else { 0.0 };
        };
        let problem = LocalProblem {
            regressors: &reg,
            responses: &resp,
            dim,
            outputs: 1,
            interactions: &interactions,
        };
        let fit = problem
            .fit(&rows, &point, &bandwidths, &spec, MIN_BOUNDARY_EFFECTIVE, true)
            .map_err(|e| match e {
                MteError::SparseRegion { effective, required } => MteError::BoundarySparsity { effective, required },
                e => e,
            })?;
        let dot = |w: &[f64]| w.iter().zip(&fit.coefficients[0]).map(|(a, b)| a * b).sum::<f64>();
        Ok(BranchSlope {
            treatment: t,
            value: sign * dot(&at_boundary),
            se: fit.combination_se(0, &at_boundary).expect("requested"),
            offset_value: sign * dot(&at_offset),
            offset_se: fit.combination_se(0, &at_offset).expect("requested"),
            effective: fit.effective,
        })
    };
    let baseline = branch(k, 1.0)?;
    let contrast_branch = branch(j, -1.0)?;
    Ok(MteEstimate {
        qstar: boundary.qstar,
        contrast: j,
        point,
        offset,
        bandwidths,
        mte: baseline.value - contrast_branch.value,
        se: baseline.se.hypot(contrast_branch.se),
        offset_mte: baseline.offset_value - contrast_branch.offset_value,
        baseline,
        contrast_branch,
    })
}

//! Thresholds as limits of `H` along the exclusion directions, extrapolated
//! linearly in the probability of the pushed treatments.

use serde::{Deserialize, Serialize};

use super::kernel::{least_squares, sorted_quantile, KernelSpec, LocalProblem};
use super::SampleSet;
use crate::error::{MteError, Result};
use crate::population::limits::pushed_point;
use crate::population::{ApproachSchedule, ChoiceProbabilities};
use crate::selection::{Scenario, ThresholdVector};

/// Fewest points used by the final linear extrapolation.
pub const EXTRAPOLATION_POINTS: usize = 4;

/// Below this spread of `rho` the extrapolation reduces to a weighted mean.
pub const RHO_SPREAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub step: usize,
    pub z: Vec<f64>,
    /// Probability of the pushed treatments at `z`.
    pub rho: f64,
    pub h: f64,
    /// Precision weight of the point.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub target: usize,
    pub pushed: Vec<usize>,
    pub points: Vec<ThresholdPoint>,
    pub estimate: f64,
    /// The schedule left the data support before its last step.
    pub truncated: bool,
    pub warnings: Vec<String>,
}

/// `Q_target(z)` from `H` along the approach schedule.
pub fn estimate_threshold<P: ChoiceProbabilities + ?Sized>(
    probs: &P,
    scenario: &Scenario,
    z: &[f64],
    target: usize,
    schedule: &ApproachSchedule,
) -> Result<ThresholdEstimate> {
    scenario.slot(target)?;
    if schedule.steps == 0 {
        return Err(MteError::InvalidArgument("approach schedule has no steps".into()));
    }
    let k = scenario.baseline();
    let pushed: Vec<usize> = scenario.others().into_iter().filter(|&i| i != target).collect();
    let mut points = Vec::with_capacity(schedule.steps);
    let mut warnings = Vec::new();
    let mut truncated = false;
    for s in 1..=schedule.steps {
        let zs = pushed_point(scenario, z, &pushed, schedule, s)?;
        match probs.weighted_probabilities(&zs) {
            Ok((p, weight)) => points.push(ThresholdPoint {
                step: s,
                rho: pushed.iter().map(|&i| p[i]).sum(),
                h: p[k],
                z: zs,
                weight,
            }),
            Err(MteError::SparseRegion { effective, .. }) if !points.is_empty() => {
                truncated = true;
                warnings.push(format!(
                    "schedule truncated at step {s} of {}: effective count {effective:.2}",
                    schedule.steps
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let used = points.len().div_ceil(2).max(EXTRAPOLATION_POINTS).min(points.len());
    let tail = &points[points.len() - used..];
    if tail.len() == 1 {
        warnings.push("single supported step; returning the smoothed value".into());
    }
    let estimate = extrapolate(tail);
    Ok(ThresholdEstimate {
        target,
        pushed,
        points,
        estimate: estimate.clamp(0.0, 1.0),
        truncated,
        warnings,
    })
}

/// Weighted least-squares intercept of `h` on `rho`; a weighted mean when
/// `rho` barely moves.
fn extrapolate(tail: &[ThresholdPoint]) -> f64 {
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.rho), b.max(p.rho)));
    let sw: f64 = tail.iter().map(|p| p.weight).sum();
    let mean = tail.iter().map(|p| p.weight * p.h).sum::<f64>() / sw;
    if tail.len() < 2 || hi - lo < RHO_SPREAD_FLOOR {
        return mean;
    }
    let rows: Vec<Vec<f64>> = tail.iter().map(|p| vec![p.weight.sqrt(), p.weight.sqrt() * p.rho]).collect();
    let b: Vec<f64> = tail.iter().map(|p| p.weight.sqrt() * p.h).collect();
    least_squares(&rows, &b).map_or(mean, |c| c[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimates {
    pub z: Vec<f64>,
    pub targets: Vec<ThresholdEstimate>,
}

impl ThresholdEstimates {
    pub fn vector(&self, baseline: usize) -> ThresholdVector {
        ThresholdVector::new(baseline, self.targets.iter().map(|t| t.estimate).collect())
    }
}

/// Every non-baseline threshold at `z`.
pub fn estimate_thresholds<P: ChoiceProbabilities + ?Sized>(
    probs: &P,
    scenario: &Scenario,
    z: &[f64],
    schedule: &ApproachSchedule,
) -> Result<ThresholdEstimates> {
    let targets = scenario
        .others()
        .into_iter()
        .map(|t| estimate_threshold(probs, scenario, z, t, schedule))
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdEstimates {
        z: z.to_vec(),
        targets,
    })
}

/// Estimated threshold of one treatment along its own exclusion coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub target: usize,
    pub coordinate: usize,
    pub z: Vec<f64>,
    /// Smoothed estimates used for interpolation.
    pub q: Vec<f64>,
    /// Pointwise estimates before smoothing.
    pub raw: Vec<f64>,
}

impl ThresholdGrid {
    /// Linear interpolation, constant beyond the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.z.len();
        if x <= self.z[0] {
            return self.q[0];
        }
        if x >= self.z[n - 1] {
            return self.q[n - 1];
        }
        let i = self.z.partition_point(|&g| g <= x);
        let t = (x - self.z[i - 1]) / (self.z[i] - self.z[i - 1]);
        self.q[i - 1] + t * (self.q[i] - self.q[i - 1])
    }
}

/// Estimated thresholds of every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationThresholds {
    pub grids: Vec<ThresholdGrid>,
    /// Per non-baseline treatment (slot order), one value per observation.
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Local linear smoothing of grid values with bandwidth `h`; points whose
/// window holds too few neighbours keep their raw value.
fn smooth_grid(z: &[f64], q: &[f64], h: f64, spec: &KernelSpec) -> Result<Vec<f64>> {
    let reg = |i: usize, out: &mut [f64]| out[0] = z[i];
    let resp = |i: usize, out: &mut [f64]| out[0] = q[i];
    let problem = LocalProblem {
        regressors: &reg,
        responses: &resp,
        dim: 1,
        outputs: 1,
        interactions: &[],
    };
    let rows: Vec<usize> = (0..z.len()).collect();
    let spec = KernelSpec { order: 1, ..*spec };
    z.iter()
        .zip(q)
        .map(|(&x, &raw)| match problem.fit(&rows, &[x], &[h], &spec, 1.0, false) {
            Ok(f) => Ok(f.coefficients[0][0].clamp(0.0, 1.0)),
            Err(MteError::SparseRegion { .. }) => Ok(raw),
            Err(e) => Err(e),
        })
        .collect()
}

/// Thresholds of every observation, assuming each `Q_t` moves only with the
/// coordinate excluded from the other utilities. Each `Q_t` is estimated on
/// a quantile grid of that coordinate with the remaining coordinates at
/// their sample medians, smoothed over the grid at the coordinate's kernel
/// bandwidth, then interpolated.
pub fn observation_thresholds<P: ChoiceProbabilities + ?Sized>(
    probs: &P,
    sample: &SampleSet,
    scenario: &Scenario,
    schedule: &ApproachSchedule,
    grid_points: usize,
    kernel: &KernelSpec,
) -> Result<ObservationThresholds> {
    if grid_points < 2 {
        return Err(MteError::InvalidArgument("threshold grid needs at least two points".into()));
    }
    let spec = scenario.spec();
    if !spec.utilities[scenario.baseline()].z_refs().is_empty() {
        return Err(MteError::Config(
            "per-observation thresholds need a baseline utility constant in z".into(),
        ));
    }
    let m = sample.instrument_dim;
    let sorted: Vec<Vec<f64>> = (0..m)
        .map(|c| {
            let mut v = sample.column(c);
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let medians: Vec<f64> = sorted.iter().map(|v| sorted_quantile(v, 0.5)).collect();
    let columns: Vec<Vec<f64>> = (0..m).map(|c| sample.column(c)).collect();
    let bandwidths = kernel.bandwidths(&columns)?;
    let mut grids = Vec::new();
    let mut warnings = Vec::new();
    for t in scenario.others() {
        let ex = scenario
            .exclusion_for(t)
            .ok_or_else(|| MteError::Config(format!("no exclusion restriction declared for treatment {t}")))?;
        if spec.utilities[t].z_refs().iter().any(|&c| c != ex.coordinate) {
            return Err(MteError::Config(format!(
                "utility {t} moves with coordinates other than its excluded z[{}]",
                ex.coordinate
            )));
        }
        let mut zs = Vec::with_capacity(grid_points);
        let mut qs = Vec::with_capacity(grid_points);
        for g in 0..grid_points {
            let p = 0.01 + 0.98 * g as f64 / (grid_points - 1) as f64;
            let x = sorted_quantile(&sorted[ex.coordinate], p);
            if zs.last().is_some_and(|&l| x <= l) {
                continue;
            }
            let mut z = medians.clone();
            z[ex.coordinate] = x;
            match estimate_threshold(probs, scenario, &z, t, schedule) {
                Ok(e) => {
                    zs.push(x);
                    qs.push(e.estimate);
                }
                Err(MteError::SparseRegion { .. }) => {
                    warnings.push(format!("treatment {t}: grid point z[{}] = {x} unsupported", ex.coordinate));
                }
                Err(e) => return Err(e),
            }
        }
        if zs.len() < 2 {
            return Err(MteError::SparseRegion {
                effective: zs.len() as f64,
                required: 2.0,
            });
        }
        let smooth = smooth_grid(&zs, &qs, bandwidths[ex.coordinate], kernel)?;
        grids.push(ThresholdGrid {
            target: t,
            coordinate: ex.coordinate,
            z: zs,
            q: smooth,
            raw: qs,
        });
    }
    let values = grids
        .iter()
        .map(|g| (0..sample.len()).map(|i| g.eval(sample.z_row(i)[g.coordinate])).collect())
        .collect();
    Ok(ObservationThresholds {
        grids,
        values,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns one row per call, then reports a sparse region.
    struct Fixed(Vec<Vec<f64>>, std::cell::Cell<usize>);

    impl ChoiceProbabilities for Fixed {
        fn probabilities(&self, _: &[f64]) -> Result<Vec<f64>> {
            let s = self.1.get();
            self.1.set(s + 1);
            self.0.get(s).cloned().ok_or(MteError::SparseRegion {
                effective: 0.0,
                required: 10.0,
            })
        }
    }

    fn scenario() -> Scenario {
        crate::config::bundled("trivial").unwrap().scenario().unwrap()
    }

    #[test]
    fn single_step_returns_smoothed_value_with_warning() {
        let p = Fixed(vec![vec![0.2, 0.5, 0.3]], Default::default());
        let sched = ApproachSchedule {
            steps: 1,
            ratio: 0.5,
            stride: 1.0,
        };
        let e = estimate_threshold(&p, &scenario(), &[0.0, 0.0], 2, &sched).unwrap();
        assert_eq!(e.estimate, 0.5);
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn linear_extrapolation_in_rho_and_truncation() {
        // H = 0.7 - 0.5 rho on the supported steps; the fourth step is sparse
        let rows: Vec<Vec<f64>> = [0.3, 0.2, 0.1].iter().map(|&r| vec![r, 0.7 - 0.5 * r, 0.0]).collect();
        let p = Fixed(rows, Default::default());
        let sched = ApproachSchedule {
            steps: 6,
            ratio: 0.5,
            stride: 1.0,
        };
        let e = estimate_threshold(&p, &scenario(), &[0.0, 0.0], 2, &sched).unwrap();
        assert!(e.truncated);
        assert_eq!(e.points.len(), 3);
        assert!((e.estimate - 0.7).abs() < 1e-12);
    }

    #[test]
    fn grid_interpolation_is_flat_outside() {
        let g = ThresholdGrid {
            target: 0,
            coordinate: 0,
            z: vec![0.0, 1.0],
            q: vec![0.2, 0.4],
            raw: vec![0.2, 0.4],
        };
        assert_eq!(g.eval(-1.0), 0.2);
        assert!((g.eval(0.25) - 0.25).abs() < 1e-15);
        assert_eq!(g.eval(3.0), 0.4);
    }
}

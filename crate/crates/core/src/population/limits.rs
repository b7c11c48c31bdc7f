//! Identification of thresholds at infinity.
//!
//! `H(z) = P(D = k | z) = F_V(Q(z))`. Pushing every non-baseline utility
//! except `R_t` to minus infinity drives the other thresholds to one, so `H`
//! converges to `Q_t(z)`.

use serde::{Deserialize, Serialize};

use crate::distributions::{joint_cdf_v, McOptions, TAIL_MASS};
use crate::error::{MteError, Result};
use crate::numerics::quadrature::adaptive_gk;
use crate::selection::{thresholds, Exclusion, Scenario};

/// How the excluded coordinates approach their limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachSchedule {
    pub steps: usize,
    /// Contraction factor toward a finite limit per step.
    pub ratio: f64,
    /// Step toward an infinite limit, in units of the coordinate's spread.
    pub stride: f64,
}

impl Default for ApproachSchedule {
    fn default() -> Self {
        Self {
            steps: 10,
            ratio: 0.1,
            stride: 1.0,
        }
    }
}

impl ApproachSchedule {
    /// Coordinate value after `s` steps from `start`. Finite limits are
    /// approached geometrically, infinite ones linearly.
    pub fn point(&self, start: f64, limit: f64, scale: f64, s: usize) -> f64 {
        if limit.is_finite() {
            limit + (start - limit) * self.ratio.powi(s as i32)
        } else {
            start + limit.signum() * self.stride * scale * s as f64
        }
    }
}

/// Choice probabilities `P(D = m | z)` from some source.
pub trait ChoiceProbabilities {
    fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// Probabilities with a relative precision weight (one for exact sources).
    fn weighted_probabilities(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok((self.probabilities(z)?, 1.0))
    }
}

/// Exact population choice probabilities.
pub struct PopulationProbabilities<'a> {
    pub scenario: &'a Scenario,
    pub mc: McOptions,
}

impl ChoiceProbabilities for PopulationProbabilities<'_> {
    fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        choice_probabilities(self.scenario, z, self.mc)
    }
}

/// `P(D = m | z)` for every treatment. Independent errors reduce to one
/// dimension: `P(D = m) = E[prod_{i != m} S_i(U_m + R_i - R_m)]`.
pub fn choice_probabilities(scenario: &Scenario, z: &[f64], mc: McOptions) -> Result<Vec<f64>> {
    let r = scenario.utilities_at(z)?;
    let kk = r.len();
    if !scenario.errors().is_independent() {
        let mut rng = crate::numerics::stream_rng(mc.seed, 0);
        let mut u = vec![0.0; kk];
        let mut counts = vec![0usize; kk];
        for _ in 0..mc.draws {
            scenario.errors().sample_into(&mut rng, &mut u)?;
            counts[crate::selection::choose_latent(&r, &u)?.chosen] += 1;
        }
        return Ok(counts.iter().map(|&c| c as f64 / mc.draws as f64).collect());
    }
    let laws = scenario.errors().components();
    let mut out = Vec::with_capacity(kk);
    for m in 0..kk {
        if r[m] == f64::NEG_INFINITY {
            out.push(0.0);
            continue;
        }
        let (lo, hi) = laws[m].truncated_support(TAIL_MASS);
        let f = |t: f64| {
            let mut v = laws[m].pdf(t);
            for i in 0..kk {
                if i != m && r[i] != f64::NEG_INFINITY {
                    v *= laws[i].sf(t + r[i] - r[m]);
                }
            }
            v
        };
        let mut pts: Vec<f64> = [1e-9, 1e-4, 0.02, 0.25, 0.5, 0.75, 0.98, 1.0 - 1e-4, 1.0 - 1e-9]
            .iter()
            .filter_map(|&p| laws[m].quantile(p).ok())
            .chain([lo, hi])
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut total = 0.0;
        for w in pts.windows(2) {
            total += adaptive_gk(f, w[0], w[1], 1e-15, 1e-13, 400)?.value;
        }
        out.push(total.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Trace of `H` while the other thresholds are pushed to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTrace {
    pub target: usize,
    pub pushed: Vec<usize>,
    pub h: Vec<f64>,
    pub limit: f64,
    pub truth: f64,
    pub abs_error: f64,
    /// `0 <= Q_t - H <= 1 - Q_other` held at every step.
    pub bounds_hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLimitReport {
    pub z: Vec<f64>,
    pub traces: Vec<LimitTrace>,
    /// `H` with every non-baseline utility pushed away; tends to one.
    pub all_pushed: f64,
}

/// Instrument point with the coordinates excluding `pushed` moved `s` steps.
pub fn pushed_point(
    scenario: &Scenario,
    z: &[f64],
    pushed: &[usize],
    schedule: &ApproachSchedule,
    s: usize,
) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    for &p in pushed {
        let ex: &Exclusion = scenario.exclusion_for(p).ok_or_else(|| {
            MteError::Config(format!("no exclusion restriction declared for treatment {p}"))
        })?;
        let scale = scenario.instruments()[ex.coordinate].scale();
        out[ex.coordinate] = schedule.point(z[ex.coordinate], ex.limit, scale, s);
    }
    Ok(out)
}

/// Aitken acceleration of the last three terms, kept only when it is a
/// small correction of a contracting sequence.
pub fn aitken_limit(h: &[f64]) -> f64 {
    let n = h.len();
    let last = h[n - 1];
    if n < 3 {
        return last;
    }
    let d1 = h[n - 2] - h[n - 3];
    let d2 = last - h[n - 2];
    let denom = d2 - d1;
    if d2.abs() >= d1.abs() || denom.abs() < 1e-300 {
        return last;
    }
    let corr = d2 * d2 / denom;
    if corr.abs() > 10.0 * d2.abs() {
        last
    } else {
        last - corr
    }
}

/// Recovers every threshold `Q_t(z)` as a limit of `H` and compares it with
/// the closed form.
pub fn identify_thresholds_by_limit(
    scenario: &Scenario,
    z: &[f64],
    schedule: &ApproachSchedule,
    mc: McOptions,
) -> Result<ThresholdLimitReport> {
    let others = scenario.others();
    let truth = thresholds(scenario, z)?;
    let h_at = |zz: &[f64]| -> Result<f64> {
        let q = thresholds(scenario, zz)?;
        Ok(joint_cdf_v(scenario.errors(), scenario.laws(), &q.values, mc)?.value)
    };
    let mut traces = Vec::with_capacity(others.len());
    for &t in &others {
        let pushed: Vec<usize> = others.iter().copied().filter(|&i| i != t).collect();
        let mut h = Vec::with_capacity(schedule.steps);
        let mut bounds_hold = true;
        for s in 1..=schedule.steps {
            let zs = pushed_point(scenario, z, &pushed, schedule, s)?;
            let hs = h_at(&zs)?;
            let qs = thresholds(scenario, &zs)?;
            let qt = qs.get(t).expect("target threshold");
            let slack: f64 = pushed.iter().map(|&p| 1.0 - qs.get(p).expect("threshold")).sum();
            if !(qt - hs >= -1e-12 && qt - hs <= slack + 1e-12) {
                bounds_hold = false;
            }
            h.push(hs);
        }
        let tol = if scenario.errors().is_independent() { 1e-12 } else { 5.0 / (mc.draws as f64).sqrt() };
        if h.windows(2).any(|w| w[1] < w[0] - tol) {
            return Err(MteError::LimitIdentification(format!(
                "trace for threshold {t} is not monotone: {h:?}"
            )));
        }
        let n = h.len();
        if n >= 2 && (h[n - 1] - h[n - 2]).abs() > 1e-6_f64.max(tol) {
            return Err(MteError::LimitIdentification(format!(
                "trace for threshold {t} has not converged: last step moved {}",
                (h[n - 1] - h[n - 2]).abs()
            )));
        }
        let limit = aitken_limit(&h);
        let tv = truth.get(t).expect("threshold");
        traces.push(LimitTrace {
            target: t,
            pushed,
            h,
            limit,
            truth: tv,
            abs_error: (limit - tv).abs(),
            bounds_hold,
        });
    }
    let zall = pushed_point(scenario, z, &others, schedule, schedule.steps)?;
    let all_pushed = h_at(&zall)?;
    Ok(ThresholdLimitReport {
        z: z.to_vec(),
        traces,
        all_pushed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_moves_toward_limits() {
        let s = ApproachSchedule::default();
        assert!((s.point(1.0, 0.0, 1.0, 3) - 1e-3).abs() < 1e-18);
        assert_eq!(s.point(0.5, f64::NEG_INFINITY, 2.0, 2), -3.5);
        assert_eq!(s.point(0.5, f64::INFINITY, 1.0, 1), 1.5);
    }

    #[test]
    fn aitken_accelerates_geometric_sequences() {
        let h: Vec<f64> = (0..6).map(|n| 0.3 - 0.2 * 0.5f64.powi(n)).collect();
        assert!((aitken_limit(&h) - 0.3).abs() < 1e-14);
        assert_eq!(aitken_limit(&[0.1, 0.2]), 0.2);
    }
}

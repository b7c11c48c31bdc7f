//! Population-scale identification: conditional expectations over choice
//! regions, their boundary extension, partial derivatives at the boundary,
//! and the true conditional expectations they must reproduce.

pub mod extension;
pub mod integrator;
pub mod limits;

pub use limits::{
    choice_probabilities, identify_thresholds_by_limit, ApproachSchedule, ChoiceProbabilities, LimitTrace,
    PopulationProbabilities,
    ThresholdLimitReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};
use crate::selection::{GFunction, Scenario};
use integrator::{MonteCarloIntegrator, TensorIntegrator};

/// Numerical settings of the population engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSettings {
    /// Nodes per error dimension; `None` picks by treatment count.
    pub nodes: Option<usize>,
    /// Largest accepted gap between the fine and coarse quadrature rules.
    pub quadrature_tolerance: f64,
    /// Largest accepted Richardson disagreement of a boundary derivative.
    pub step_tolerance: f64,
    /// Largest accepted gap between interior approach and boundary value.
    pub extension_tolerance: f64,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        Self {
            nodes: None,
            quadrature_tolerance: 1e-6,
            step_tolerance: 1e-4,
            extension_tolerance: 1e-4,
            mc_draws: 2_000_000,
            seed: 0x00c0_ffee,
        }
    }
}

impl PopulationSettings {
    /// Default finite-difference step: cube root of the quadrature tolerance,
    /// floored at 1e-4.
    pub fn default_step(&self) -> f64 {
        self.quadrature_tolerance.cbrt().max(1e-4)
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Tensor {
        fine: TensorIntegrator,
        coarse: TensorIntegrator,
    },
    MonteCarlo(MonteCarloIntegrator),
}

/// A numerical value with its error diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Fine-versus-coarse quadrature gap (zero when not checked).
    pub quadrature_error: f64,
    /// Monte Carlo standard error (zero for quadrature).
    pub mc_se: f64,
}

/// Point `(1, ..., q*_j, ..., 1)` with its neighbourhood radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub contrast: usize,
    pub qstar: f64,
    pub delta: f64,
}

/// Smallest and largest `q*` accepted for derivatives.
pub const QSTAR_RANGE: (f64, f64) = (0.05, 0.95);

impl BoundaryPoint {
    pub fn new(contrast: usize, qstar: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && qstar > delta && qstar < 1.0 - delta) {
            return Err(MteError::InvalidArgument(format!(
                "boundary q* = {qstar} must lie in (delta, 1 - delta) with delta = {delta} > 0"
            )));
        }
        Ok(Self {
            contrast,
            qstar,
            delta,
        })
    }

    pub fn contains(&self, qj: f64) -> bool {
        (qj - self.qstar).abs() < self.delta
    }
}

/// Boundary derivative with its step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    /// Richardson-extrapolated derivative, sign-adjusted for the branch.
    pub value: f64,
    pub central_h: f64,
    pub central_half_h: f64,
    pub richardson_gap: f64,
    pub mc_se: f64,
}

/// Recovered conditional expectations and MTE at a boundary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MteIdentified {
    pub qstar: f64,
    pub contrast: usize,
    pub step: f64,
    pub baseline: DerivativeEstimate,
    pub contrast_value: DerivativeEstimate,
    pub mte: f64,
}

/// One finite-difference step in a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub h: f64,
    pub estimate: f64,
}

/// Recovered versus true value, serialised for downstream tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub recovered: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub mc_se: f64,
    pub steps: Vec<Step>,
}

impl IdentificationReport {
    pub fn new(recovered: f64, oracle: f64, mc_se: f64, steps: Vec<Step>) -> Self {
        Self {
            recovered,
            oracle,
            abs_error: (recovered - oracle).abs(),
            mc_se,
            steps,
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.abs_error <= tolerance
    }
}

/// Boundary value with its interior-approach consistency diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub value: f64,
    /// `(1 - q_other, interior value)` along the axis-aligned approach.
    pub approach: Vec<(f64, f64)>,
    pub extrapolated: f64,
    pub gap: f64,
    /// Limit along a diagonal approach that also moves `q_j`.
    pub diagonal_extrapolated: f64,
    pub path_gap: f64,
}

/// Quantile treatment effect at a boundary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QteReport {
    pub tau: f64,
    pub quantile_baseline: f64,
    pub quantile_contrast: f64,
    pub qte: f64,
    pub y_grid: Vec<f64>,
    pub cdf_baseline: Vec<f64>,
    pub cdf_contrast: Vec<f64>,
}

/// Distance from one used by interior approaches to the boundary.
pub const APPROACH: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Population engine bound to a scenario.
#[derive(Debug, Clone)]
pub struct Population<'a> {
    scenario: &'a Scenario,
    settings: PopulationSettings,
    engine: Engine,
}

impl<'a> Population<'a> {
    /// Tensor quadrature for independent errors with up to four treatments,
    /// Monte Carlo otherwise.
    pub fn new(scenario: &'a Scenario, settings: PopulationSettings) -> Result<Self> {
        let kk = scenario.treatments();
        let engine = if scenario.errors().is_independent() && kk <= 4 {
            let nodes = settings.nodes.unwrap_or(if kk == 3 { 48 } else { 32 });
            Engine::Tensor {
                fine: TensorIntegrator::new(scenario.errors(), nodes)?,
                coarse: TensorIntegrator::new(scenario.errors(), (nodes * 3).div_ceil(4))?,
            }
        } else {
            Engine::MonteCarlo(MonteCarloIntegrator {
                draws: settings.mc_draws,
                seed: settings.seed,
            })
        };
        Ok(Self {
            scenario,
            settings,
            engine,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn settings(&self) -> &PopulationSettings {
        &self.settings
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self.engine, Engine::MonteCarlo(_))
    }

    /// Treatment-indexed cut points `c_i = F_{k,i}^{-1}(q_i)`, `c_k = 0`, from
    /// non-baseline coordinates `q`.
    pub fn cuts(&self, q: &[f64]) -> Result<Vec<f64>> {
        let s = self.scenario;
        let others = s.others();
        if q.len() != others.len() {
            return Err(MteError::Dimension {
                expected: others.len(),
                got: q.len(),
            });
        }
        let mut cuts = vec![0.0; s.treatments()];
        for (&i, &qi) in others.iter().zip(q) {
            if !(0.0..=1.0).contains(&qi) {
                return Err(MteError::InvalidArgument(format!("threshold {qi} outside [0, 1]")));
            }
            cuts[i] = s.laws().law(i).expect("law").quantile_closed(qi)?;
        }
        Ok(cuts)
    }

    /// Non-baseline coordinates with `q_j` set and every other coordinate at `other`.
    pub fn point(&self, j: usize, qj: f64, other: f64) -> Result<Vec<f64>> {
        let slot = self.scenario.slot(j)?;
        let mut q = vec![other; self.scenario.treatments() - 1];
        q[slot] = qj;
        Ok(q)
    }

    fn check_treatment(&self, t: usize) -> Result<()> {
        if t >= self.scenario.treatments() {
            return Err(MteError::IndexOutOfRange {
                index: t,
                len: self.scenario.treatments(),
            });
        }
        Ok(())
    }

    /// `E[G(Y_t) 1{D = t} | Q = q]` for each `G` in `gs`, without error check.
    fn region(&self, gs: &[GFunction], t: usize, cuts: &[f64], fine: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.scenario;
        let f = |v: &[f64], out: &mut [f64]| {
            for (o, g) in out.iter_mut().zip(gs) {
                *o = s.conditional_g(g, t, v);
            }
        };
        match &self.engine {
            Engine::Tensor { fine: a, coarse: b } => {
                let rule = if fine { a } else { b };
                Ok((rule.integrate(s, t, cuts, gs.len(), &f)?, vec![0.0; gs.len()]))
            }
            Engine::MonteCarlo(mc) => mc.integrate(s, t, cuts, gs.len(), &f),
        }
    }

    /// Region expectations with the fine-versus-coarse error check.
    pub fn region_checked(&self, gs: &[GFunction], t: usize, cuts: &[f64]) -> Result<Vec<Estimate>> {
        self.check_treatment(t)?;
        let (fine, se) = self.region(gs, t, cuts, true)?;
        let coarse = if self.is_monte_carlo() {
            fine.clone()
        } else {
            self.region(gs, t, cuts, false)?.0
        };
        let mut out = Vec::with_capacity(gs.len());
        for i in 0..gs.len() {
            let err = (fine[i] - coarse[i]).abs();
            let tol = self.settings.quadrature_tolerance;
            if err > tol {
                return Err(MteError::Quadrature {
                    oscillation: err,
                    tolerance: tol,
                });
            }
            out.push(Estimate {
                value: fine[i],
                quadrature_error: err,
                mc_se: se[i],
            });
        }
        Ok(out)
    }

    /// `E[G(Y_t) D_t | Q(Z) = q]` with `q` the non-baseline thresholds.
    pub fn cond_mean_gd(&self, g: &GFunction, t: usize, q: &[f64]) -> Result<Estimate> {
        let cuts = self.cuts(q)?;
        Ok(self.region_checked(std::slice::from_ref(g), t, &cuts)?[0])
    }

    /// Boundary value at `(1, ..., q_j, ..., 1)`: the limit integral
    /// `int_0^{q_j} E[G(Y_k) | V_j = v] dv` for the baseline and
    /// `int_{q_j}^1 E[G(Y_j) | V_j = v] dv` for the contrast.
    pub fn boundary_values(&self, gs: &[GFunction], t: usize, j: usize, qj: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_branch(t, j)?;
        let cuts = self.cuts(&self.point(j, qj, 1.0)?)?;
        self.region(gs, t, &cuts, true)
    }

    fn check_branch(&self, t: usize, j: usize) -> Result<()> {
        let k = self.scenario.baseline();
        self.scenario.slot(j)?;
        if t != k && t != j {
            return Err(MteError::InvalidArgument(format!(
                "treatment {t} is neither the baseline {k} nor the contrast {j}"
            )));
        }
        Ok(())
    }

    /// Boundary value plus consistency checks against interior approaches.
    pub fn extended_cond_mean_gd(
        &self,
        g: &GFunction,
        t: usize,
        boundary: &BoundaryPoint,
        qj: f64,
    ) -> Result<ExtensionReport> {
        let j = boundary.contrast;
        self.check_branch(t, j)?;
        if !boundary.contains(qj) {
            return Err(MteError::InvalidArgument(format!(
                "q_j = {qj} outside the neighbourhood of q* = {}",
                boundary.qstar
            )));
        }
        let gs = std::slice::from_ref(g);
        let value = self.boundary_values(gs, t, j, qj)?.0[0];
        let interior = |eps: f64, qjj: f64| -> Result<f64> {
            let cuts = self.cuts(&self.point(j, qjj, 1.0 - eps)?)?;
            Ok(self.region(gs, t, &cuts, true)?.0[0])
        };
        let mut approach = Vec::with_capacity(APPROACH.len());
        for &eps in &APPROACH {
            approach.push((eps, interior(eps, qj)?));
        }
        let tol = self.settings.extension_tolerance;
        let slack = if self.is_monte_carlo() { tol } else { 1e-10 };
        for w in approach.windows(2) {
            if (w[1].1 - value).abs() > (w[0].1 - value).abs() + slack {
                return Err(MteError::ExtensionConsistency {
                    gap: (w[1].1 - value).abs(),
                });
            }
        }
        let extrapolate = |pts: &[(f64, f64)]| {
            let (e1, v1) = pts[pts.len() - 2];
            let (e2, v2) = pts[pts.len() - 1];
            v2 + (v2 - v1) * e2 / (e1 - e2)
        };
        let extrapolated = extrapolate(&approach);
        let gap = (extrapolated - value).abs();
        // diagonal path: q_j moves toward its target together with the others
        let room = (boundary.delta - (qj - boundary.qstar).abs()).max(0.0);
        let mut diagonal = Vec::new();
        for &eps in &APPROACH[1..] {
            let shift = eps.min(0.5 * room);
            let dir = if qj >= boundary.qstar { -1.0 } else { 1.0 };
            diagonal.push((eps, interior(eps, qj + dir * shift)?));
        }
        let diagonal_extrapolated = extrapolate(&diagonal);
        let path_gap = (diagonal_extrapolated - extrapolated).abs();
        if gap > tol || path_gap > tol {
            return Err(MteError::ExtensionConsistency {
                gap: gap.max(path_gap),
            });
        }
        Ok(ExtensionReport {
            value,
            approach,
            extrapolated,
            gap,
            diagonal_extrapolated,
            path_gap,
        })
    }

    /// Derivatives in `q_j` of the branch-`t` boundary values, one per `G`.
    pub fn boundary_derivatives(
        &self,
        gs: &[GFunction],
        t: usize,
        boundary: &BoundaryPoint,
        h: f64,
    ) -> Result<Vec<DerivativeEstimate>> {
        let j = boundary.contrast;
        let q = boundary.qstar;
        if q < QSTAR_RANGE.0 || q > QSTAR_RANGE.1 {
            return Err(MteError::InvalidArgument(format!(
                "q* = {q} outside the supported range [{}, {}]",
                QSTAR_RANGE.0, QSTAR_RANGE.1
            )));
        }
        if !(h > 0.0 && 2.0 * h < boundary.delta) {
            return Err(MteError::InvalidArgument(format!(
                "step {h} does not fit twice inside the neighbourhood radius {}",
                boundary.delta
            )));
        }
        let sign = if t == self.scenario.baseline() { 1.0 } else { -1.0 };
        let eval = |x: f64| self.boundary_values(gs, t, j, x);
        let (p1, s1) = eval(q + h)?;
        let (m1, _) = eval(q - h)?;
        let (p2, _) = eval(q + 0.5 * h)?;
        let (m2, _) = eval(q - 0.5 * h)?;
        let mut out = Vec::with_capacity(gs.len());
        for i in 0..gs.len() {
            let d1 = sign * (p1[i] - m1[i]) / (2.0 * h);
            let d2 = sign * (p2[i] - m2[i]) / h;
            let rich = d2 + (d2 - d1) / 3.0;
            let gap = (d2 - d1).abs() / 3.0;
            let mc_se = s1[i] * 2f64.sqrt() / h;
            let allowed = self.settings.step_tolerance.max(3.0 * mc_se);
            if gap > allowed {
                return Err(MteError::StepSize { gap });
            }
            out.push(DerivativeEstimate {
                value: rich,
                central_h: d1,
                central_half_h: d2,
                richardson_gap: gap,
                mc_se,
            });
        }
        Ok(out)
    }

    /// `E[G(Y_k) | V_j = q*]`, `E[G(Y_j) | V_j = q*]` and their difference.
    pub fn mte_identified(&self, g: &GFunction, boundary: &BoundaryPoint, h: Option<f64>) -> Result<MteIdentified> {
        let h = h.unwrap_or_else(|| self.settings.default_step());
        let gs = std::slice::from_ref(g);
        let k = self.scenario.baseline();
        let j = boundary.contrast;
        let base = self.boundary_derivatives(gs, k, boundary, h)?[0];
        let con = self.boundary_derivatives(gs, j, boundary, h)?[0];
        Ok(MteIdentified {
            qstar: boundary.qstar,
            contrast: j,
            step: h,
            baseline: base,
            contrast_value: con,
            mte: base.value - con.value,
        })
    }

    /// True `E[G(Y_t) | V_j = q]` by direct conditioning, for each `G`.
    pub fn conditional_mean_oracle(&self, gs: &[GFunction], t: usize, j: usize, q: f64) -> Result<Vec<Estimate>> {
        self.check_treatment(t)?;
        self.scenario.slot(j)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(MteError::Domain(q));
        }
        let s = self.scenario;
        let f = |v: &[f64], out: &mut [f64]| {
            for (o, g) in out.iter_mut().zip(gs) {
                *o = s.conditional_g(g, t, v);
            }
        };
        match &self.engine {
            Engine::Tensor { fine, .. } => {
                let x = s.laws().law(j).expect("law").quantile(q)?;
                Ok(fine
                    .conditional(s, j, x, gs.len(), &f)?
                    .into_iter()
                    .map(|value| Estimate {
                        value,
                        quadrature_error: 0.0,
                        mc_se: 0.0,
                    })
                    .collect())
            }
            Engine::MonteCarlo(mc) => {
                let (m, se) = mc.conditional(s, j, q, 0.005, gs.len(), &f)?;
                Ok(m.into_iter()
                    .zip(se)
                    .map(|(value, mc_se)| Estimate {
                        value,
                        quadrature_error: 0.0,
                        mc_se,
                    })
                    .collect())
            }
        }
    }

    /// True MTE `E[G(Y_k) - G(Y_j) | V_j = q*]`.
    pub fn oracle_mte(&self, g: &GFunction, j: usize, q: f64) -> Result<(f64, f64)> {
        let gs = std::slice::from_ref(g);
        let a = self.conditional_mean_oracle(gs, self.scenario.baseline(), j, q)?[0];
        let b = self.conditional_mean_oracle(gs, j, j, q)?[0];
        Ok((a.value, b.value))
    }

    /// Report comparing a recovered MTE with the oracle.
    pub fn mte_report(&self, g: &GFunction, boundary: &BoundaryPoint, h: Option<f64>) -> Result<IdentificationReport> {
        let m = self.mte_identified(g, boundary, h)?;
        let (a, b) = self.oracle_mte(g, boundary.contrast, boundary.qstar)?;
        let steps = vec![
            Step {
                h: m.step,
                estimate: m.baseline.central_h - m.contrast_value.central_h,
            },
            Step {
                h: 0.5 * m.step,
                estimate: m.baseline.central_half_h - m.contrast_value.central_half_h,
            },
        ];
        let se = m.baseline.mc_se.hypot(m.contrast_value.mc_se);
        Ok(IdentificationReport::new(m.mte, a - b, se, steps))
    }

    /// `Q_{Y_k | V_j = q*}(tau) - Q_{Y_j | V_j = q*}(tau)` from CDFs traced on `y_grid`.
    pub fn qte(&self, boundary: &BoundaryPoint, tau: f64, y_grid: &[f64], h: Option<f64>) -> Result<QteReport> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MteError::Domain(tau));
        }
        if y_grid.len() < 2 || y_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MteError::InvalidArgument("y grid must be strictly increasing".into()));
        }
        let h = h.unwrap_or_else(|| self.settings.default_step());
        let gs: Vec<GFunction> = y_grid.iter().map(|&y| GFunction::IndicatorBelow(y)).collect();
        let trace = |t: usize| -> Result<Vec<f64>> {
            let d = self.boundary_derivatives(&gs, t, boundary, h)?;
            monotone_cdf(d.iter().map(|e| e.value).collect())
        };
        let cdf_baseline = trace(self.scenario.baseline())?;
        let cdf_contrast = trace(boundary.contrast)?;
        let qk = invert_traced(y_grid, &cdf_baseline, tau)?;
        let qj = invert_traced(y_grid, &cdf_contrast, tau)?;
        Ok(QteReport {
            tau,
            quantile_baseline: qk,
            quantile_contrast: qj,
            qte: qk - qj,
            y_grid: y_grid.to_vec(),
            cdf_baseline,
            cdf_contrast,
        })
    }
}

/// Tolerated decrease or excursion outside `[0, 1]` of a traced CDF.
pub const CDF_TOLERANCE: f64 = 1e-6;

fn monotone_cdf(mut f: Vec<f64>) -> Result<Vec<f64>> {
    for i in 0..f.len() {
        if f[i] < -CDF_TOLERANCE || f[i] > 1.0 + CDF_TOLERANCE {
            return Err(MteError::Inversion(format!("traced CDF value {} outside [0, 1]", f[i])));
        }
        if i > 0 && f[i] < f[i - 1] - CDF_TOLERANCE {
            return Err(MteError::Inversion(format!(
                "traced CDF decreases by {} at grid point {i}",
                f[i - 1] - f[i]
            )));
        }
        f[i] = f[i].clamp(0.0, 1.0);
        if i > 0 {
            f[i] = f[i].max(f[i - 1]);
        }
    }
    Ok(f)
}

/// Smallest `y` with traced CDF reaching `tau`, by linear interpolation.
pub fn invert_traced(y: &[f64], f: &[f64], tau: f64) -> Result<f64> {
    if tau < f[0] || tau > f[f.len() - 1] {
        return Err(MteError::Inversion(format!(
            "level {tau} outside traced range [{}, {}]",
            f[0],
            f[f.len() - 1]
        )));
    }
    let i = f.iter().position(|&p| p >= tau).expect("level within range");
    if i == 0 || f[i] == f[i - 1] {
        return Ok(y[i]);
    }
    Ok(y[i - 1] + (tau - f[i - 1]) / (f[i] - f[i - 1]) * (y[i] - y[i - 1]))
}

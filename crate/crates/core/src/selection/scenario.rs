//! The data-generating process: utilities, instruments, errors, outcomes and
//! the exclusion restrictions used for identification at infinity.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distributions::{BaselineLaws, ErrorVectorLaw, UnivariateLaw, TAIL_MASS};
use crate::error::{MteError, Result};
use crate::expr::{Env, Expr};
use crate::numerics::quadrature::{GaussLegendre, SinhMap};

/// Law of one instrument coordinate; coordinates are independent.
#[derive(Debug, Clone)]
pub enum InstrumentLaw {
    Law(UnivariateLaw),
    LogNormal { mu: f64, sigma: f64 },
}

impl InstrumentLaw {
    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(MteError::InvalidLaw(format!(
                "lognormal needs finite mu and positive sigma, got ({mu}, {sigma})"
            )));
        }
        Ok(Self::LogNormal { mu, sigma })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Law(l) => l.sample(rng),
            Self::LogNormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Self::Law(l) => l.quantile(p),
            Self::LogNormal { mu, sigma } => {
                Ok((mu + sigma * crate::distributions::std_normal_quantile(p)?).exp())
            }
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).unwrap_or(0.0)
    }

    /// Typical spread, used to size approach steps.
    pub fn scale(&self) -> f64 {
        let lo = self.quantile(0.25).unwrap_or(0.0);
        let hi = self.quantile(0.75).unwrap_or(1.0);
        ((hi - lo) / 1.349).max(1e-12)
    }
}

/// `Y_t = m_t(V) + noise_t` with `noise_t` independent of everything else.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub mean: Expr,
    pub noise: Option<UnivariateLaw>,
}

/// Transformation `G` applied to outcomes.
#[derive(Debug, Clone, PartialEq)]
pub enum GFunction {
    Identity,
    /// `1{Y <= y}`.
    IndicatorBelow(f64),
    /// Expression in `y`.
    Expr(Expr),
}

impl GFunction {
    pub fn apply(&self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::IndicatorBelow(c) => {
                if y <= *c {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Expr(e) => e.eval(&Env {
                y,
                ..Default::default()
            }),
        }
    }
}

/// Which reading of the exclusion restriction is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReading {
    /// Other utilities do not move with the excluded coordinate.
    #[default]
    Weak,
    /// Additionally the baseline utility is constant in every instrument.
    Strong,
}

/// Instrument coordinate `coordinate` drives `R_treatment` to minus infinity
/// as it approaches `limit` (which may be infinite).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub treatment: usize,
    pub coordinate: usize,
    pub limit: f64,
}

/// Everything needed to build a [`Scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub baseline: usize,
    pub contrast: usize,
    pub utilities: Vec<Expr>,
    pub instruments: Vec<InstrumentLaw>,
    pub errors: ErrorVectorLaw,
    pub outcomes: Vec<Outcome>,
    pub exclusions: Vec<Exclusion>,
    pub reading: ExclusionReading,
    /// Seed for empirical difference-law fits under dependent errors.
    pub law_seed: u64,
}

/// An immutable, validated data-generating process.
#[derive(Debug, Clone)]
pub struct Scenario {
    spec: ScenarioSpec,
    laws: BaselineLaws,
    noise_nodes: Vec<Vec<(f64, f64)>>,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let k = spec.utilities.len();
        if k < 3 {
            return Err(MteError::InvalidArgument(format!("need at least 3 treatments, got {k}")));
        }
        if spec.errors.dim() != k {
            return Err(MteError::Dimension {
                expected: k,
                got: spec.errors.dim(),
            });
        }
        if spec.outcomes.len() != k {
            return Err(MteError::Dimension {
                expected: k,
                got: spec.outcomes.len(),
            });
        }
        for idx in [spec.baseline, spec.contrast] {
            if idx >= k {
                return Err(MteError::IndexOutOfRange { index: idx, len: k });
            }
        }
        if spec.baseline == spec.contrast {
            return Err(MteError::InvalidArgument("contrast must differ from baseline".into()));
        }
        let m = spec.instruments.len();
        if m < 2 {
            return Err(MteError::InvalidArgument(format!(
                "need at least two continuous instruments, got {m}"
            )));
        }
        for (t, r) in spec.utilities.iter().enumerate() {
            if let Some(&bad) = r.z_refs().iter().find(|&&i| i >= m) {
                return Err(MteError::Expression(format!(
                    "utility {t} references z[{bad}] but only {m} instruments exist"
                )));
            }
            if !r.v_refs().is_empty() || r.uses_y() {
                return Err(MteError::Expression(format!("utility {t} may only reference z")));
            }
        }
        for (t, o) in spec.outcomes.iter().enumerate() {
            if !o.mean.z_refs().is_empty() || o.mean.uses_y() {
                return Err(MteError::Expression(format!("outcome {t} may only reference v")));
            }
            if let Some(&bad) = o.mean.v_refs().iter().find(|&&i| i >= k || i == spec.baseline) {
                return Err(MteError::Expression(format!(
                    "outcome {t} references v[{bad}], which is not a heterogeneity coordinate"
                )));
            }
        }
        validate_exclusions(&spec, k, m)?;
        let laws = BaselineLaws::build(&spec.errors, spec.baseline, spec.law_seed)?;
        let rule = GaussLegendre::new(64);
        let noise_nodes = spec
            .outcomes
            .iter()
            .map(|o| match &o.noise {
                None => vec![(0.0, 1.0)],
                Some(law) => {
                    let (lo, hi) = law.truncated_support(TAIL_MASS);
                    let map = SinhMap::new(law.median(), law.robust_scale());
                    let mut nodes = Vec::new();
                    map.nodes(&rule, lo, hi, &mut nodes);
                    nodes.into_iter().map(|(e, w)| (e, w * law.pdf(e))).collect()
                }
            })
            .collect();
        Ok(Self {
            spec,
            laws,
            noise_nodes,
        })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Number of treatments `K`.
    pub fn treatments(&self) -> usize {
        self.spec.utilities.len()
    }

    pub fn baseline(&self) -> usize {
        self.spec.baseline
    }

    pub fn contrast(&self) -> usize {
        self.spec.contrast
    }

    pub fn instrument_dim(&self) -> usize {
        self.spec.instruments.len()
    }

    pub fn instruments(&self) -> &[InstrumentLaw] {
        &self.spec.instruments
    }

    pub fn errors(&self) -> &ErrorVectorLaw {
        &self.spec.errors
    }

    pub fn laws(&self) -> &BaselineLaws {
        &self.laws
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.spec.outcomes
    }

    pub fn exclusions(&self) -> &[Exclusion] {
        &self.spec.exclusions
    }

    pub fn exclusion_for(&self, treatment: usize) -> Option<&Exclusion> {
        self.spec.exclusions.iter().find(|e| e.treatment == treatment)
    }

    /// Non-baseline treatments in increasing order.
    pub fn others(&self) -> Vec<usize> {
        (0..self.treatments()).filter(|&i| i != self.baseline()).collect()
    }

    /// Position of treatment `i` within [`Scenario::others`].
    pub fn slot(&self, i: usize) -> Result<usize> {
        let k = self.baseline();
        if i >= self.treatments() || i == k {
            return Err(MteError::IndexOutOfRange {
                index: i,
                len: self.treatments(),
            });
        }
        Ok(if i < k { i } else { i - 1 })
    }

    pub fn utilities_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.instrument_dim() {
            return Err(MteError::Dimension {
                expected: self.instrument_dim(),
                got: z.len(),
            });
        }
        let env = Env {
            z,
            ..Default::default()
        };
        Ok(self.spec.utilities.iter().map(|r| r.eval(&env)).collect())
    }

    pub fn sample_instruments<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, law) in out.iter_mut().zip(&self.spec.instruments) {
            *o = law.sample(rng);
        }
    }

    /// `m_t(v)` where `v` is indexed by treatment.
    pub fn outcome_mean(&self, t: usize, v: &[f64]) -> f64 {
        self.spec.outcomes[t].mean.eval(&Env {
            v,
            ..Default::default()
        })
    }

    /// `E[G(Y_t) | V = v]`, integrating out the outcome noise.
    pub fn conditional_g(&self, g: &GFunction, t: usize, v: &[f64]) -> f64 {
        let m = self.outcome_mean(t, v);
        let noise = &self.spec.outcomes[t].noise;
        match (g, noise) {
            (GFunction::Identity, None) => m,
            (GFunction::Identity, Some(law)) => m + law.mean(),
            (GFunction::IndicatorBelow(c), Some(law)) => law.cdf(c - m),
            (g, _) => self.noise_nodes[t].iter().map(|&(e, w)| w * g.apply(m + e)).sum(),
        }
    }

    /// Draw `Y_t` given `V = v`.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, t: usize, v: &[f64], rng: &mut R) -> f64 {
        let m = self.outcome_mean(t, v);
        match &self.spec.outcomes[t].noise {
            Some(law) => m + law.sample(rng),
            None => m,
        }
    }
}

fn validate_exclusions(spec: &ScenarioSpec, k: usize, m: usize) -> Result<()> {
    for (n, e) in spec.exclusions.iter().enumerate() {
        if e.treatment >= k || e.treatment == spec.baseline {
            return Err(MteError::Config(format!(
                "exclusion {n}: treatment {} must be a non-baseline treatment",
                e.treatment
            )));
        }
        if e.coordinate >= m {
            return Err(MteError::Config(format!(
                "exclusion {n}: coordinate {} out of range for {m} instruments",
                e.coordinate
            )));
        }
        if e.limit.is_nan() {
            return Err(MteError::Config(format!("exclusion {n}: limit is NaN")));
        }
        if spec.exclusions[..n].iter().any(|p| p.treatment == e.treatment || p.coordinate == e.coordinate) {
            return Err(MteError::Config(format!(
                "exclusion {n}: treatment or coordinate listed twice"
            )));
        }
        for (j, r) in spec.utilities.iter().enumerate() {
            if j != e.treatment && r.z_refs().contains(&e.coordinate) {
                return Err(MteError::Config(format!(
                    "exclusion {n}: utility {j} depends on excluded coordinate z[{}]",
                    e.coordinate
                )));
            }
        }
    }
    if spec.reading == ExclusionReading::Strong && !spec.utilities[spec.baseline].z_refs().is_empty() {
        return Err(MteError::Config(
            "strong exclusion reading requires a baseline utility constant in z".into(),
        ));
    }
    Ok(())
}

//! Declarative scenario and run configuration (TOML).

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::distributions::{CorrelatedGaussian, ErrorVectorLaw, UnivariateLaw};
use crate::error::{MteError, Result};
use crate::estimation::{BandwidthRule, KernelKind, KernelSpec};
use crate::expr::Expr;
use crate::population::{ApproachSchedule, PopulationSettings};
use crate::selection::{Exclusion, ExclusionReading, GFunction, InstrumentLaw, Outcome, Scenario, ScenarioSpec};

/// How the second parameter of a normal law is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalSpread {
    #[default]
    Variance,
    Std,
}

/// A univariate law as written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawSpec {
    #[serde(alias = "gaussian")]
    Normal { mean: f64, spread: f64 },
    Uniform { lo: f64, hi: f64 },
    Logistic { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, df: f64 },
    /// Instruments only.
    Lognormal { mu: f64, sigma: f64 },
}

impl LawSpec {
    pub fn to_law(&self, spread: NormalSpread) -> Result<UnivariateLaw> {
        match *self {
            LawSpec::Normal { mean, spread: s } => {
                let sd = match spread {
                    NormalSpread::Variance => {
                        if s <= 0.0 {
                            return Err(MteError::InvalidLaw(format!("normal variance must be positive, got {s}")));
                        }
                        s.sqrt()
                    }
                    NormalSpread::Std => s,
                };
                UnivariateLaw::gaussian(mean, sd)
            }
            LawSpec::Uniform { lo, hi } => UnivariateLaw::uniform(lo, hi),
            LawSpec::Logistic { loc, scale } => UnivariateLaw::logistic(loc, scale),
            LawSpec::StudentT { loc, scale, df } => UnivariateLaw::student_t(loc, scale, df),
            LawSpec::Lognormal { .. } => Err(MteError::Config(
                "lognormal laws are only available for instruments".into(),
            )),
        }
    }

    pub fn to_instrument(&self, spread: NormalSpread) -> Result<InstrumentLaw> {
        match *self {
            LawSpec::Lognormal { mu, sigma } => InstrumentLaw::lognormal(mu, sigma),
            _ => Ok(InstrumentLaw::Law(self.to_law(spread)?)),
        }
    }
}

/// Correlated Gaussian errors; `spread` follows `normal_spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependentErrors {
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub mean: Expr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<LawSpec>,
}

/// Instrument limit: a number, `"inf"` or `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limit(pub f64);

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Limit(x)),
            Raw::Int(x) => Ok(Limit(x as f64)),
            Raw::Text(t) => match t.trim() {
                "inf" | "+inf" | "infinity" => Ok(Limit(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(Limit(f64::NEG_INFINITY)),
                other => other
                    .parse::<f64>()
                    .map(Limit)
                    .map_err(|_| serde::de::Error::custom(format!("bad limit `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionSpec {
    pub treatment: usize,
    pub coordinate: usize,
    pub limit: Limit,
}

/// Outcome transformation `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GSpec {
    Identity,
    Below { y: f64 },
    Expr { expr: Expr },
}

impl Default for GSpec {
    fn default() -> Self {
        GSpec::Identity
    }
}

impl GSpec {
    pub fn to_g(&self) -> GFunction {
        match self {
            GSpec::Identity => GFunction::Identity,
            GSpec::Below { y } => GFunction::IndicatorBelow(*y),
            GSpec::Expr { expr } => GFunction::Expr(expr.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub qstar: Vec<f64>,
    pub y: Vec<f64>,
    pub tau: Vec<f64>,
    /// Instrument points at which thresholds are identified by limits.
    pub z_points: Vec<Vec<f64>>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            qstar: (1..=9).map(|i| i as f64 / 10.0).collect(),
            y: (0..=60).map(|i| -4.0 + i as f64 * 0.2).collect(),
            tau: vec![0.25, 0.5, 0.75],
            z_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub mte: f64,
    pub threshold: f64,
    pub quadrature: f64,
    pub step: f64,
    pub extension: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mte: 1e-3,
            threshold: 1e-4,
            quadrature: 1e-6,
            step: 1e-4,
            extension: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    pub nodes: Option<usize>,
    pub step: Option<f64>,
    pub delta: f64,
    pub mc_draws: usize,
    pub approach_steps: usize,
    pub approach_ratio: f64,
    pub approach_stride: f64,
}

impl Default for PopulationSection {
    fn default() -> Self {
        let a = ApproachSchedule::default();
        Self {
            nodes: None,
            step: None,
            delta: 0.04,
            mc_draws: 2_000_000,
            approach_steps: a.steps,
            approach_ratio: a.ratio,
            approach_stride: a.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub n: usize,
    pub replications: usize,
    pub qstar: f64,
    pub kernel: KernelKind,
    /// Fixed bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub order: u8,
    pub threshold_grid: usize,
    pub approach_steps: usize,
    pub approach_ratio: f64,
    pub approach_stride: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            n: 200_000,
            replications: 20,
            qstar: 0.5,
            kernel: KernelKind::Epanechnikov,
            bandwidth: None,
            order: 1,
            threshold_grid: 41,
            approach_steps: 12,
            approach_ratio: 0.5,
            approach_stride: 0.25,
        }
    }
}

impl EstimationSection {
    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kernel: self.kernel,
            bandwidth: match self.bandwidth {
                Some(h) => BandwidthRule::Fixed(h),
                None => BandwidthRule::Silverman,
            },
            order: self.order,
        }
    }

    pub fn schedule(&self) -> ApproachSchedule {
        ApproachSchedule {
            steps: self.approach_steps,
            ratio: self.approach_ratio,
            stride: self.approach_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrawCounts {
    pub verify: usize,
    pub cloud: usize,
}

impl Default for DrawCounts {
    fn default() -> Self {
        Self {
            verify: 100_000,
            cloud: 100_000,
        }
    }
}

/// Full configuration of a scenario and the experiments run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub baseline: usize,
    pub contrast: usize,
    #[serde(default)]
    pub normal_spread: NormalSpread,
    #[serde(default)]
    pub exclusion_reading: ExclusionReading,
    #[serde(default)]
    pub seed: u64,
    pub utilities: Vec<Expr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<LawSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependent_errors: Option<DependentErrors>,
    pub instruments: Vec<LawSpec>,
    pub outcomes: Vec<OutcomeSpec>,
    #[serde(default)]
    pub exclusion: Vec<ExclusionSpec>,
    #[serde(default)]
    pub g: GSpec,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub draws: DrawCounts,
    #[serde(default)]
    pub population: PopulationSection,
    #[serde(default)]
    pub estimation: EstimationSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MteError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MteError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MteError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn error_law(&self) -> Result<ErrorVectorLaw> {
        match (&self.dependent_errors, self.errors.is_empty()) {
            (Some(d), true) => {
                let sd = d
                    .spread
                    .iter()
                    .map(|&s| match self.normal_spread {
                        NormalSpread::Variance => s.sqrt(),
                        NormalSpread::Std => s,
                    })
                    .collect();
                let sampler = CorrelatedGaussian::new(d.mean.clone(), sd, d.correlation.clone())?;
                Ok(ErrorVectorLaw::joint(Arc::new(sampler)))
            }
            (None, false) => ErrorVectorLaw::independent(
                self.errors
                    .iter()
                    .map(|l| l.to_law(self.normal_spread))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => Err(MteError::Config(
                "give exactly one of `errors` or `dependent_errors`".into(),
            )),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let spread = self.normal_spread;
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| {
                Ok(Outcome {
                    mean: o.mean.clone(),
                    noise: o.noise.as_ref().map(|n| n.to_law(spread)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(ScenarioSpec {
            name: self.name.clone(),
            baseline: self.baseline,
            contrast: self.contrast,
            utilities: self.utilities.clone(),
            instruments: self
                .instruments
                .iter()
                .map(|l| l.to_instrument(spread))
                .collect::<Result<Vec<_>>>()?,
            errors: self.error_law()?,
            outcomes,
            exclusions: self
                .exclusion
                .iter()
                .map(|e| Exclusion {
                    treatment: e.treatment,
                    coordinate: e.coordinate,
                    limit: e.limit.0,
                })
                .collect(),
            reading: self.exclusion_reading,
            law_seed: self.seed,
        })
    }

    pub fn population_settings(&self) -> PopulationSettings {
        PopulationSettings {
            nodes: self.population.nodes,
            quadrature_tolerance: self.tolerances.quadrature,
            step_tolerance: self.tolerances.step,
            extension_tolerance: self.tolerances.extension,
            mc_draws: self.population.mc_draws,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> ApproachSchedule {
        ApproachSchedule {
            steps: self.population.approach_steps,
            ratio: self.population.approach_ratio,
            stride: self.population.approach_stride,
        }
    }
}

/// Scenarios shipped with the crate.
pub const BUNDLED: [(&str, &str); 5] = [
    ("figure1", include_str!("../scenarios/figure1.toml")),
    ("gaussian_linear", include_str!("../scenarios/gaussian_linear.toml")),
    ("trivial", include_str!("../scenarios/trivial.toml")),
    ("k4_general", include_str!("../scenarios/k4_general.toml")),
    ("logistic_mixed", include_str!("../scenarios/logistic_mixed.toml")),
];

pub fn bundled(name: &str) -> Result<ScenarioConfig> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| MteError::Config(format!("no bundled scenario named `{name}`")))?;
    ScenarioConfig::from_toml(text)
}

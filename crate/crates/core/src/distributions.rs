//! Error laws, laws of pairwise error differences, and the induced law of
//! the normalized heterogeneity vector `V`.
//!
//! For a baseline treatment `k`, each other treatment `i` gets the difference
//! `U_k - U_i` and its distribution function `F_{k,i}`; the heterogeneity
//! coordinate is `V_i = F_{k,i}(U_k - U_i)`, uniform on `[0, 1]`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use libm::erfc;

use crate::error::{MteError, Result};
use crate::numerics::interp::{MonotoneCubic, TabulatedCdf};
use crate::numerics::quadrature::adaptive_gk;
use crate::numerics::roots::invert_monotone;
use crate::numerics::{mean_and_se, stream_rng};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Mass left outside the truncated range used for numeric integration.
pub const TAIL_MASS: f64 = 1e-13;

/// Number of draws behind an empirical difference-law fit.
pub const EMPIRICAL_FIT_DRAWS: usize = 1_000_000;

/// Standard normal CDF computed through `erfc` so both tails keep relative precision.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal quantile, polished by Newton steps on the `erfc` CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MteError::Domain(p));
    }
    let mut z = acklam(p);
    for _ in 0..3 {
        let (c, d) = if z > 0.0 {
            // work with the upper tail to keep precision
            (-(std_normal_cdf(-z) - (1.0 - p)), std_normal_pdf(z))
        } else {
            (std_normal_cdf(z) - p, std_normal_pdf(z))
        };
        if d == 0.0 {
            break;
        }
        let step = c / d;
        z -= step;
        if step.abs() < 1e-16 * z.abs().max(1.0) {
            break;
        }
    }
    Ok(z)
}

// Acklam's rational approximation (relative error ~1e-9), refined by the caller.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Family tag of a univariate law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    Gaussian,
    Uniform,
    Logistic,
    StudentT,
    Empirical,
}

/// Law fitted to a sample: monotone cubic CDF with exponential tails.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    cdf: TabulatedCdf,
    mean: f64,
    variance: f64,
}

/// A continuous univariate law.
#[derive(Debug, Clone)]
pub enum UnivariateLaw {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Logistic { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, df: f64 },
    Empirical(Box<EmpiricalLaw>),
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(MteError::InvalidLaw(format!("{name} must be finite, got {v}")))
    }
}

impl UnivariateLaw {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        finite("mean", mean)?;
        finite("sd", sd)?;
        if sd <= 0.0 {
            return Err(MteError::InvalidLaw(format!(
                "gaussian standard deviation must be positive, got {sd}"
            )));
        }
        Ok(Self::Gaussian { mean, sd })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        finite("lo", lo)?;
        finite("hi", hi)?;
        if lo >= hi {
            return Err(MteError::InvalidLaw(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn logistic(loc: f64, scale: f64) -> Result<Self> {
        finite("loc", loc)?;
        finite("scale", scale)?;
        if scale <= 0.0 {
            return Err(MteError::InvalidLaw(format!("logistic scale must be positive, got {scale}")));
        }
        Ok(Self::Logistic { loc, scale })
    }

    /// Location-scale Student-t. Degrees of freedom at or below one have no
    /// finite mean and are rejected.
    pub fn student_t(loc: f64, scale: f64, df: f64) -> Result<Self> {
        finite("loc", loc)?;
        finite("scale", scale)?;
        finite("df", df)?;
        if scale <= 0.0 {
            return Err(MteError::InvalidLaw(format!("student-t scale must be positive, got {scale}")));
        }
        if df <= 1.0 {
            return Err(MteError::InvalidLaw(format!(
                "student-t with df = {df} has no finite mean"
            )));
        }
        Ok(Self::StudentT { loc, scale, df })
    }

    /// Fit a monotone CDF to a sample.
    pub fn empirical(samples: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = samples.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MteError::InvalidLaw("empirical sample contains non-finite values".into()));
        }
        let cdf = fit_empirical_cdf(&mut v)?;
        let (mean, _) = mean_and_se(samples);
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (samples.len() as f64 - 1.0);
        Ok(Self::Empirical(Box::new(EmpiricalLaw {
            cdf,
            mean,
            variance: var,
        })))
    }

    pub fn kind(&self) -> LawKind {
        match self {
            Self::Gaussian { .. } => LawKind::Gaussian,
            Self::Uniform { .. } => LawKind::Uniform,
            Self::Logistic { .. } => LawKind::Logistic,
            Self::StudentT { .. } => LawKind::StudentT,
            Self::Empirical(_) => LawKind::Empirical,
        }
    }

    fn student(loc: f64, scale: f64, df: f64) -> StudentsT {
        StudentsT::new(loc, scale, df).expect("validated student-t parameters")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => std_normal_cdf((x - mean) / sd),
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Logistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
            Self::StudentT { loc, scale, df } => {
                if x.is_infinite() {
                    return if x > 0.0 { 1.0 } else { 0.0 };
                }
                Self::student(loc, scale, df).cdf(x)
            }
            Self::Empirical(ref e) => e.cdf.cdf(x),
        }
    }

    /// `1 - cdf(x)` without cancellation where a closed form allows it.
    pub fn sf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => std_normal_cdf(-(x - mean) / sd),
            Self::Logistic { loc, scale } => 1.0 / (1.0 + ((x - loc) / scale).exp()),
            Self::StudentT { loc, .. } if x > loc => self.cdf(2.0 * loc - x),
            _ => 1.0 - self.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => std_normal_pdf((x - mean) / sd) / sd,
            Self::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Logistic { loc, scale } => {
                let e = (-(x - loc).abs() / scale).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
            Self::StudentT { loc, scale, df } => {
                if x.is_infinite() {
                    return 0.0;
                }
                Self::student(loc, scale, df).pdf(x)
            }
            Self::Empirical(ref e) => e.cdf.pdf(x),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(MteError::Domain(p));
        }
        match *self {
            Self::Gaussian { mean, sd } => Ok(mean + sd * std_normal_quantile(p)?),
            Self::Uniform { lo, hi } => Ok(lo + p * (hi - lo)),
            Self::Logistic { loc, scale } => Ok(loc + scale * (p / (1.0 - p)).ln()),
            Self::StudentT { loc, scale, .. } => {
                // symmetric: solve in the lower half for precision
                if p > 0.5 {
                    let lower = self.quantile(1.0 - p)?;
                    return Ok(2.0 * loc - lower);
                }
                invert_monotone(|x| self.cdf(x), p, loc, scale, 1e-15)
            }
            Self::Empirical(ref e) => e.cdf.quantile(p),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { mean, .. } => mean,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Logistic { loc, .. } => loc,
            Self::StudentT { loc, .. } => loc,
            Self::Empirical(ref e) => e.mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { sd, .. } => sd * sd,
            Self::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Self::Logistic { scale, .. } => scale * scale * std::f64::consts::PI.powi(2) / 3.0,
            Self::StudentT { scale, df, .. } => {
                if df > 2.0 {
                    scale * scale * df / (df - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            Self::Empirical(ref e) => e.variance,
        }
    }

    pub fn median(&self) -> f64 {
        match self {
            Self::Empirical(e) => e.cdf.quantile(0.5).unwrap_or(e.mean),
            _ => self.mean(),
        }
    }

    /// Robust spread (interquartile range over 1.349, the Gaussian IQR in sd units).
    pub fn robust_scale(&self) -> f64 {
        let q1 = self.quantile(0.25).unwrap_or(0.0);
        let q3 = self.quantile(0.75).unwrap_or(1.0);
        ((q3 - q1) / 1.349).max(1e-12)
    }

    /// Range holding all but `mass` of the probability, split evenly.
    pub fn truncated_support(&self, mass: f64) -> (f64, f64) {
        match *self {
            Self::Uniform { lo, hi } => (lo, hi),
            _ => (
                self.quantile(0.5 * mass).unwrap_or(f64::MIN),
                self.quantile(1.0 - 0.5 * mass).unwrap_or(f64::MAX),
            ),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Self::Uniform { lo, hi } => lo + (hi - lo) * open_unit(rng),
            Self::Logistic { loc, scale } => {
                let u = open_unit(rng);
                loc + scale * (u / (1.0 - u)).ln()
            }
            Self::StudentT { loc, scale, df } => {
                let t: f64 = rand_distr::StudentT::new(df)
                    .expect("validated degrees of freedom")
                    .sample(rng);
                loc + scale * t
            }
            Self::Empirical(ref e) => {
                let u = open_unit(rng);
                e.cdf.quantile(u).unwrap_or(e.mean)
            }
        }
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Fit a monotone piecewise-cubic CDF to a sample (sorted in place).
///
/// Knots sit at sample quantiles on a logit-spaced probability grid so the
/// tails keep resolution; beyond the outermost knots the fit continues with
/// exponential tails.
pub fn fit_empirical_cdf(samples: &mut [f64]) -> Result<TabulatedCdf> {
    let n = samples.len();
    if n < 100 {
        return Err(MteError::InvalidLaw(format!(
            "empirical fit needs at least 100 draws, got {n}"
        )));
    }
    samples.sort_by(f64::total_cmp);
    if samples[0] == samples[n - 1] {
        return Err(MteError::InvalidLaw("empirical sample is degenerate".into()));
    }
    let knots = (n / 200).clamp(10, 1500);
    let edge = 5.0 / n as f64;
    let l = ((1.0 - edge) / edge).ln();
    let mut xs = Vec::with_capacity(knots);
    let mut ps = Vec::with_capacity(knots);
    for j in 0..knots {
        let t = -l + 2.0 * l * j as f64 / (knots - 1) as f64;
        let p = 1.0 / (1.0 + (-t).exp());
        let x = sample_quantile(samples, p);
        if let (Some(&lx), Some(&lp)) = (xs.last(), ps.last()) {
            if !(x > lx && p > lp) {
                continue;
            }
        }
        xs.push(x);
        ps.push(p);
    }
    if xs.len() < 2 {
        return Err(MteError::InvalidLaw("empirical sample has too few distinct values".into()));
    }
    TabulatedCdf::new(MonotoneCubic::pchip(xs, ps)?)
}

// Linear interpolation between order statistics (Hyndman–Fan type 7).
fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Source of joint error draws for dependent errors.
pub trait JointSampler: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Multivariate Gaussian errors with a given mean, standard deviations and
/// correlation matrix.
#[derive(Debug, Clone)]
pub struct CorrelatedGaussian {
    mean: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

impl CorrelatedGaussian {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>, correlation: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if sd.len() != d || correlation.len() != d || correlation.iter().any(|r| r.len() != d) {
            return Err(MteError::Dimension {
                expected: d,
                got: sd.len(),
            });
        }
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                if (correlation[i][j] - correlation[j][i]).abs() > 1e-12 {
                    return Err(MteError::InvalidLaw("correlation matrix is not symmetric".into()));
                }
                cov[i][j] = correlation[i][j] * sd[i] * sd[j];
            }
        }
        let mut chol = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|m| chol[i][m] * chol[j][m]).sum();
                if i == j {
                    let v = cov[i][i] - s;
                    if v <= 0.0 {
                        return Err(MteError::InvalidLaw(
                            "covariance matrix is not positive definite".into(),
                        ));
                    }
                    chol[i][j] = v.sqrt();
                } else {
                    chol[i][j] = (cov[i][j] - s) / chol[j][j];
                }
            }
        }
        Ok(Self { mean, chol })
    }
}

impl JointSampler for CorrelatedGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for i in 0..d {
            out[i] = self.mean[i] + (0..=i).map(|m| self.chol[i][m] * z[m]).sum::<f64>();
        }
    }
}

/// How the error components relate to each other.
#[derive(Debug, Clone)]
pub enum Dependence {
    Independent,
    Joint(Arc<dyn JointSampler>),
    /// Declared dependent but no sampler provided; difference laws cannot be built.
    Unspecified,
}

/// Law of `(U_0, ..., U_{K-1})`.
#[derive(Debug, Clone)]
pub struct ErrorVectorLaw {
    components: Vec<UnivariateLaw>,
    dependence: Dependence,
    dim: usize,
}

impl ErrorVectorLaw {
    pub fn independent(components: Vec<UnivariateLaw>) -> Result<Self> {
        if components.len() < 2 {
            return Err(MteError::InvalidArgument("need at least two error components".into()));
        }
        let dim = components.len();
        Ok(Self {
            components,
            dependence: Dependence::Independent,
            dim,
        })
    }

    pub fn joint(sampler: Arc<dyn JointSampler>) -> Self {
        let dim = sampler.dim();
        Self {
            components: Vec::new(),
            dependence: Dependence::Joint(sampler),
            dim,
        }
    }

    pub fn dependent_without_sampler(dim: usize) -> Self {
        Self {
            components: Vec::new(),
            dependence: Dependence::Unspecified,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.dependence, Dependence::Independent)
    }

    pub fn dependence(&self) -> &Dependence {
        &self.dependence
    }

    /// Marginal law of component `i`, when known in closed form.
    pub fn component(&self, i: usize) -> Option<&UnivariateLaw> {
        self.components.get(i)
    }

    pub fn components(&self) -> &[UnivariateLaw] {
        &self.components
    }

    pub fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        if out.len() != self.dim {
            return Err(MteError::Dimension {
                expected: self.dim,
                got: out.len(),
            });
        }
        match &self.dependence {
            Dependence::Independent => {
                for (o, law) in out.iter_mut().zip(&self.components) {
                    *o = law.sample(&mut *rng);
                }
                Ok(())
            }
            Dependence::Joint(s) => {
                s.sample_into(rng, out);
                Ok(())
            }
            Dependence::Unspecified => Err(MteError::MissingJointSampler),
        }
    }
}

/// How a difference law is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceRepr {
    ClosedForm,
    NumericConvolution,
    EmpiricalMonotoneFit,
}

#[derive(Debug, Clone)]
enum DifferenceInner {
    Gaussian { mean: f64, sd: f64 },
    Tabulated(TabulatedCdf),
}

/// Law of `U_k - U_i`.
#[derive(Debug, Clone)]
pub struct DifferenceLaw {
    minuend: usize,
    subtrahend: usize,
    repr: DifferenceRepr,
    inner: DifferenceInner,
}

impl DifferenceLaw {
    pub fn minuend(&self) -> usize {
        self.minuend
    }

    pub fn subtrahend(&self) -> usize {
        self.subtrahend
    }

    pub fn representation(&self) -> DifferenceRepr {
        self.repr
    }

    /// Gaussian parameters when the law has the closed form.
    pub fn gaussian_params(&self) -> Option<(f64, f64)> {
        match self.inner {
            DifferenceInner::Gaussian { mean, sd } => Some((mean, sd)),
            DifferenceInner::Tabulated(_) => None,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match &self.inner {
            DifferenceInner::Gaussian { mean, sd } => std_normal_cdf((x - mean) / sd),
            DifferenceInner::Tabulated(t) => t.cdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match &self.inner {
            DifferenceInner::Gaussian { mean, sd } => std_normal_pdf((x - mean) / sd) / sd,
            DifferenceInner::Tabulated(t) => t.pdf(x),
        }
    }

    /// Inverse CDF on the open unit interval.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(MteError::Domain(p));
        }
        match &self.inner {
            DifferenceInner::Gaussian { mean, sd } => Ok(mean + sd * std_normal_quantile(p)?),
            DifferenceInner::Tabulated(t) => t.quantile(p),
        }
    }

    /// Quantile extended to the closed interval: `0 -> -inf`, `1 -> +inf`.
    pub fn quantile_closed(&self, p: f64) -> Result<f64> {
        if p == 0.0 {
            Ok(f64::NEG_INFINITY)
        } else if p == 1.0 {
            Ok(f64::INFINITY)
        } else {
            self.quantile(p)
        }
    }
}

/// Builds the law of `U_k - U_i`.
///
/// Independent Gaussian components give the closed form; other independent
/// components are convolved numerically; a joint sampler yields an empirical
/// monotone fit from `EMPIRICAL_FIT_DRAWS` draws seeded by `seed`.
pub fn difference_law(errors: &ErrorVectorLaw, k: usize, i: usize, seed: u64) -> Result<DifferenceLaw> {
    let dim = errors.dim();
    for idx in [k, i] {
        if idx >= dim {
            return Err(MteError::IndexOutOfRange { index: idx, len: dim });
        }
    }
    if k == i {
        return Err(MteError::InvalidArgument(format!(
            "difference law needs distinct indices, got {k} twice"
        )));
    }
    let (repr, inner) = match errors.dependence() {
        Dependence::Independent => {
            let (a, b) = (&errors.components[k], &errors.components[i]);
            match (a, b) {
                (
                    UnivariateLaw::Gaussian { mean: ma, sd: sa },
                    UnivariateLaw::Gaussian { mean: mb, sd: sb },
                ) => (
                    DifferenceRepr::ClosedForm,
                    DifferenceInner::Gaussian {
                        mean: ma - mb,
                        sd: (sa * sa + sb * sb).sqrt(),
                    },
                ),
                _ => (
                    DifferenceRepr::NumericConvolution,
                    DifferenceInner::Tabulated(convolve_difference(a, b)?),
                ),
            }
        }
        Dependence::Joint(sampler) => {
            let mut draws = Vec::with_capacity(EMPIRICAL_FIT_DRAWS);
            let mut rng = stream_rng(seed, ((k as u64) << 32) | i as u64);
            let mut u = vec![0.0; dim];
            for _ in 0..EMPIRICAL_FIT_DRAWS {
                sampler.sample_into(&mut rng, &mut u);
                draws.push(u[k] - u[i]);
            }
            (
                DifferenceRepr::EmpiricalMonotoneFit,
                DifferenceInner::Tabulated(fit_empirical_cdf(&mut draws)?),
            )
        }
        Dependence::Unspecified => return Err(MteError::MissingJointSampler),
    };
    Ok(DifferenceLaw {
        minuend: k,
        subtrahend: i,
        repr,
        inner,
    })
}

/// Law of `A - B` for independent continuous `A`, `B`, tabulated on a
/// sinh-spaced grid with exact densities as Hermite slopes.
pub fn convolve_difference(a: &UnivariateLaw, b: &UnivariateLaw) -> Result<TabulatedCdf> {
    const GRID: usize = 1601;
    let (alo, ahi) = a.truncated_support(1e-12);
    let (blo, bhi) = b.truncated_support(1e-12);
    let (lo, hi) = (alo - bhi, ahi - blo);
    let center = a.median() - b.median();
    let scale = a.robust_scale().hypot(b.robust_scale());
    let (wlo, whi) = (((lo - center) / scale).asinh(), ((hi - center) / scale).asinh());

    // breakpoints of A's range so adaptive quadrature sees the bulk
    let mut a_breaks: Vec<f64> = [1e-9, 1e-4, 0.02, 0.25, 0.5, 0.75, 0.98, 1.0 - 1e-4, 1.0 - 1e-9]
        .iter()
        .filter_map(|&p| a.quantile(p).ok())
        .collect();
    a_breaks.push(alo);
    a_breaks.push(ahi);
    let b_marks: Vec<f64> = [1e-9, 0.02, 0.5, 0.98, 1.0 - 1e-9]
        .iter()
        .filter_map(|&p| b.quantile(p).ok())
        .collect();

    let integrate = |f: &dyn Fn(f64) -> f64, x: f64| -> Result<f64> {
        let mut pts = a_breaks.clone();
        pts.extend(b_marks.iter().map(|m| m + x).filter(|t| *t > alo && *t < ahi));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut total = 0.0;
        for w in pts.windows(2) {
            if w[1] > w[0] {
                total += adaptive_gk(f, w[0], w[1], 1e-16, 1e-12, 400)?.value;
            }
        }
        Ok(total)
    };

    let mut xs = Vec::with_capacity(GRID);
    let mut ps = Vec::with_capacity(GRID);
    let mut ds = Vec::with_capacity(GRID);
    for m in 0..GRID {
        let w = wlo + (whi - wlo) * m as f64 / (GRID - 1) as f64;
        let x = center + scale * w.sinh();
        // P(A - B <= x) = E[S_B(A - x)]; upper half via the complement
        let lower = x <= center;
        let p = if lower {
            integrate(&|t| a.pdf(t) * b.sf(t - x), x)?
        } else {
            1.0 - integrate(&|t| a.pdf(t) * b.cdf(t - x), x)?
        };
        let d = integrate(&|t| a.pdf(t) * b.pdf(t - x), x)?;
        if let (Some(&lp), Some(&lx)) = (ps.last(), xs.last()) {
            if !(p > lp && x > lx) {
                continue;
            }
        }
        if !(0.0..=1.0).contains(&p) {
            continue;
        }
        xs.push(x);
        ps.push(p);
        ds.push(d);
    }
    TabulatedCdf::new(MonotoneCubic::with_slopes(xs, ps, ds)?)
}

/// The difference laws `F_{k,i}` for a fixed baseline `k`, indexed by `i`.
#[derive(Debug, Clone)]
pub struct BaselineLaws {
    baseline: usize,
    laws: Vec<Option<DifferenceLaw>>,
}

impl BaselineLaws {
    pub fn build(errors: &ErrorVectorLaw, baseline: usize, seed: u64) -> Result<Self> {
        let dim = errors.dim();
        if baseline >= dim {
            return Err(MteError::IndexOutOfRange {
                index: baseline,
                len: dim,
            });
        }
        let laws = (0..dim)
            .map(|i| {
                if i == baseline {
                    Ok(None)
                } else {
                    difference_law(errors, baseline, i, seed).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { baseline, laws })
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn treatments(&self) -> usize {
        self.laws.len()
    }

    /// `F_{k,i}`; `None` for the baseline itself or out-of-range indices.
    pub fn law(&self, i: usize) -> Option<&DifferenceLaw> {
        self.laws.get(i).and_then(|l| l.as_ref())
    }

    pub fn others(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.laws.len()).filter(move |&i| i != self.baseline)
    }

    /// Heterogeneity vector indexed by treatment; the baseline slot is NaN.
    pub fn v_from_u(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.laws.len() {
            return Err(MteError::Dimension {
                expected: self.laws.len(),
                got: u.len(),
            });
        }
        let k = self.baseline;
        Ok((0..u.len())
            .map(|i| match &self.laws[i] {
                Some(law) => law.cdf(u[k] - u[i]),
                None => f64::NAN,
            })
            .collect())
    }
}

/// `V_i = F_{k,i}(u_k - u_i)` for every `i != k`, in treatment order.
pub fn v_from_u(u: &[f64], laws: &BaselineLaws, baseline: usize) -> Result<Vec<f64>> {
    if baseline != laws.baseline() {
        return Err(MteError::IndexOutOfRange {
            index: baseline,
            len: laws.treatments(),
        });
    }
    let full = laws.v_from_u(u)?;
    Ok(laws.others().map(|i| full[i]).collect())
}

/// A probability with its Monte Carlo standard error (zero for quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probability {
    pub value: f64,
    pub se: f64,
}

/// Monte Carlo settings for quantities without a quadrature route.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub draws: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            draws: 200_000,
            seed: 0x5eed,
        }
    }
}

/// `F_V(q) = P(V_i <= q_i for all i != k)`; `q` lists the non-baseline
/// coordinates in treatment order.
///
/// Independent errors reduce to one dimension by conditioning on `U_k`:
/// `F_V(q) = E[prod_i S_i(U_k - c_i)]` with `c_i = F_{k,i}^{-1}(q_i)`.
/// Dependent errors fall back to Monte Carlo.
pub fn joint_cdf_v(errors: &ErrorVectorLaw, laws: &BaselineLaws, q: &[f64], mc: McOptions) -> Result<Probability> {
    let others: Vec<usize> = laws.others().collect();
    if q.len() != others.len() {
        return Err(MteError::Dimension {
            expected: others.len(),
            got: q.len(),
        });
    }
    if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(MteError::InvalidArgument(format!("q must lie in [0, 1], got {q:?}")));
    }
    if q.iter().any(|&v| v == 0.0) {
        return Ok(Probability { value: 0.0, se: 0.0 });
    }
    let mut cuts = Vec::with_capacity(q.len());
    for (&i, &qi) in others.iter().zip(q) {
        cuts.push((i, laws.law(i).expect("non-baseline law").quantile_closed(qi)?));
    }
    let k = laws.baseline();
    if errors.is_independent() {
        let active: Vec<(usize, f64)> = cuts.into_iter().filter(|c| c.1.is_finite()).collect();
        if active.is_empty() {
            return Ok(Probability { value: 1.0, se: 0.0 });
        }
        let base = &errors.components()[k];
        let (lo, hi) = base.truncated_support(TAIL_MASS);
        let integrand = |t: f64| {
            let mut v = base.pdf(t);
            for &(i, c) in &active {
                v *= errors.components()[i].sf(t - c);
            }
            v
        };
        let mut pts: Vec<f64> = [1e-9, 1e-4, 0.02, 0.25, 0.5, 0.75, 0.98, 1.0 - 1e-4, 1.0 - 1e-9]
            .iter()
            .filter_map(|&p| base.quantile(p).ok())
            .chain([lo, hi])
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut total = 0.0;
        for w in pts.windows(2) {
            total += adaptive_gk(integrand, w[0], w[1], 1e-15, 1e-13, 400)?.value;
        }
        Ok(Probability {
            value: total.clamp(0.0, 1.0),
            se: 0.0,
        })
    } else {
        let mut rng = stream_rng(mc.seed, 0);
        let mut u = vec![0.0; errors.dim()];
        let mut hits = 0usize;
        for _ in 0..mc.draws {
            errors.sample_into(&mut rng, &mut u)?;
            if cuts.iter().all(|&(i, c)| u[k] - u[i] <= c) {
                hits += 1;
            }
        }
        let p = hits as f64 / mc.draws as f64;
        Ok(Probability {
            value: p,
            se: (p * (1.0 - p) / mc.draws as f64).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> ErrorVectorLaw {
        ErrorVectorLaw::independent(vec![
            UnivariateLaw::gaussian(0.0, 0.5f64.sqrt()).unwrap(),
            UnivariateLaw::gaussian(1.0, 1.0).unwrap(),
            UnivariateLaw::gaussian(-1.0, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.8, 0.999, 1.0 - 1e-9] {
            let z = std_normal_quantile(p).unwrap();
            let back = if p > 0.5 { 1.0 - std_normal_cdf(-z) } else { std_normal_cdf(z) };
            assert!(((back - p) / p.min(1.0 - p)).abs() < 1e-12, "p={p}");
        }
        assert!((std_normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-13);
    }

    #[test]
    fn figure1_difference_is_closed_form() {
        let d = difference_law(&fig1(), 1, 2, 0).unwrap();
        assert_eq!(d.representation(), DifferenceRepr::ClosedForm);
        let (m, s) = d.gaussian_params().unwrap();
        assert_eq!(m, 2.0);
        assert!((s * s - 2.0).abs() < 1e-14);
        assert!((d.cdf(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_difference_has_zero_median() {
        let e = ErrorVectorLaw::independent(vec![
            UnivariateLaw::gaussian(0.0, 1.0).unwrap(),
            UnivariateLaw::gaussian(0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let d = difference_law(&e, 0, 1, 0).unwrap();
        assert_eq!(d.quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn quantile_at_975_matches_normal_oracle() {
        let d = difference_law(&fig1(), 1, 2, 0).unwrap();
        let q = d.quantile(0.975).unwrap();
        assert!((q - (2.0 + 1.959_964 * 2f64.sqrt())).abs() < 1e-5);
        assert!((d.cdf(q) - 0.975).abs() <= 1e-10);
    }

    #[test]
    fn quantile_domain_errors() {
        let d = difference_law(&fig1(), 1, 0, 0).unwrap();
        assert_eq!(d.quantile(0.0), Err(MteError::Domain(0.0)));
        assert_eq!(d.quantile(1.0), Err(MteError::Domain(1.0)));
        assert!(d.quantile(f64::NAN).is_err());
    }

    #[test]
    fn difference_law_rejects_bad_indices() {
        assert!(matches!(difference_law(&fig1(), 1, 1, 0), Err(MteError::InvalidArgument(_))));
        assert!(matches!(
            difference_law(&fig1(), 1, 5, 0),
            Err(MteError::IndexOutOfRange { .. })
        ));
        let dep = ErrorVectorLaw::dependent_without_sampler(3);
        assert_eq!(difference_law(&dep, 0, 1, 0).unwrap_err(), MteError::MissingJointSampler);
    }

    #[test]
    fn law_constructors_reject_invalid_parameters() {
        assert!(UnivariateLaw::gaussian(0.0, 0.0).is_err());
        assert!(UnivariateLaw::uniform(1.0, 1.0).is_err());
        assert!(UnivariateLaw::logistic(0.0, -1.0).is_err());
        assert!(UnivariateLaw::student_t(0.0, 1.0, 1.0).is_err());
        assert!(UnivariateLaw::empirical(&[1.0; 500]).is_err());
    }

    #[test]
    fn v_from_u_at_origin_is_median() {
        let e = ErrorVectorLaw::independent(vec![UnivariateLaw::gaussian(0.0, 1.0).unwrap(); 3]).unwrap();
        let laws = BaselineLaws::build(&e, 1, 0).unwrap();
        let v = v_from_u(&[0.0, 0.0, 0.0], &laws, 1).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
        let v = v_from_u(&[0.0, 1e6, 0.0], &laws, 1).unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
        assert!(v_from_u(&[0.0, 0.0, 0.0], &laws, 0).is_err());
    }

    #[test]
    fn joint_cdf_edges() {
        let e = fig1();
        let laws = BaselineLaws::build(&e, 1, 0).unwrap();
        let mc = McOptions::default();
        assert_eq!(joint_cdf_v(&e, &laws, &[1.0, 1.0], mc).unwrap().value, 1.0);
        for &q in &[0.05, 0.3, 0.77] {
            let a = joint_cdf_v(&e, &laws, &[q, 1.0], mc).unwrap().value;
            let b = joint_cdf_v(&e, &laws, &[1.0, q], mc).unwrap().value;
            assert!((a - q).abs() < 1e-9 && (b - q).abs() < 1e-9, "{a} {b} {q}");
        }
        assert_eq!(joint_cdf_v(&e, &laws, &[0.0, 0.4], mc).unwrap().value, 0.0);
        assert!(joint_cdf_v(&e, &laws, &[0.4], mc).is_err());
    }

    #[test]
    fn correlated_sampler_feeds_empirical_fit() {
        let s = CorrelatedGaussian::new(
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![vec![1.0, 0.5, 0.0], vec![0.5, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let e = ErrorVectorLaw::joint(Arc::new(s));
        let d = difference_law(&e, 0, 1, 3).unwrap();
        assert_eq!(d.representation(), DifferenceRepr::EmpiricalMonotoneFit);
        // U0 - U1 ~ N(0, 1) under correlation 0.5
        for &x in &[-1.5, -0.4, 0.0, 0.9] {
            assert!((d.cdf(x) - std_normal_cdf(x)).abs() < 3e-3, "x={x}");
        }
        let q = d.quantile(0.25).unwrap();
        assert!((d.cdf(q) - 0.25).abs() < 1e-6);
    }
}

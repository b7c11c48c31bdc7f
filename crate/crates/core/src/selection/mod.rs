//! The multinomial choice rule and its threshold-crossing representation.
//!
//! With baseline `k`, write `c_i = R_k(z) - R_i(z)` and `Q_i(z) = F_{k,i}(c_i)`.
//! Treatment `k` is chosen iff `V_i < Q_i` for every `i != k`. Treatment `j`
//! is chosen iff `V_j >= Q_j` and, for every other `i`,
//! `V_i < F_{k,i}(F_{k,j}^{-1}(V_j) - F_{k,j}^{-1}(Q_j) + F_{k,i}^{-1}(Q_i))`.

mod scenario;

pub use scenario::{
    Exclusion, ExclusionReading, GFunction, InstrumentLaw, Outcome, Scenario, ScenarioSpec,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};
use crate::numerics::stream_rng;

/// Draws per independent random stream in parallel loops.
pub const CHUNK: usize = 8192;

/// Result of the argmax choice.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceOutcome {
    pub chosen: usize,
    pub indicators: Vec<u8>,
    pub latent: Vec<f64>,
}

/// `d = argmax_k (R_k(z) - u_k)`; exact ties are an error.
pub fn choose(scenario: &Scenario, z: &[f64], u: &[f64]) -> Result<ChoiceOutcome> {
    let r = scenario.utilities_at(z)?;
    choose_latent(&r, u)
}

/// Argmax given utilities `r` and errors `u` directly.
pub fn choose_latent(r: &[f64], u: &[f64]) -> Result<ChoiceOutcome> {
    if r.len() != u.len() {
        return Err(MteError::Dimension {
            expected: r.len(),
            got: u.len(),
        });
    }
    let latent: Vec<f64> = r.iter().zip(u).map(|(a, b)| a - b).collect();
    if let Some(i) = latent.iter().position(|x| x.is_nan()) {
        return Err(MteError::InvalidArgument(format!("latent utility {i} is NaN")));
    }
    let mut best = 0;
    for i in 1..latent.len() {
        if latent[i] > latent[best] {
            best = i;
        }
    }
    if let Some(other) = (0..latent.len()).find(|&i| i != best && latent[i] == latent[best]) {
        return Err(MteError::Tie {
            a: best.min(other),
            b: best.max(other),
            value: latent[best],
        });
    }
    let mut indicators = vec![0u8; latent.len()];
    indicators[best] = 1;
    Ok(ChoiceOutcome {
        chosen: best,
        indicators,
        latent,
    })
}

/// Thresholds `Q_i(z)` for `i != baseline`, in treatment order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub baseline: usize,
    pub values: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(baseline: usize, values: Vec<f64>) -> Self {
        Self { baseline, values }
    }

    /// `Q_i` for treatment `i`.
    pub fn get(&self, i: usize) -> Option<f64> {
        if i == self.baseline {
            return None;
        }
        let slot = if i < self.baseline { i } else { i - 1 };
        self.values.get(slot).copied()
    }

    /// Treatment-indexed copy; the baseline slot holds NaN.
    pub fn by_treatment(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() + 1);
        out.extend_from_slice(&self.values[..self.baseline.min(self.values.len())]);
        out.push(f64::NAN);
        if self.baseline < self.values.len() {
            out.extend_from_slice(&self.values[self.baseline..]);
        }
        out
    }
}

/// `Q_i(z) = F_{k,i}(R_k(z) - R_i(z))`.
pub fn thresholds(scenario: &Scenario, z: &[f64]) -> Result<ThresholdVector> {
    let r = scenario.utilities_at(z)?;
    thresholds_from_utilities(scenario, &r)
}

pub fn thresholds_from_utilities(scenario: &Scenario, r: &[f64]) -> Result<ThresholdVector> {
    let k = scenario.baseline();
    let mut values = Vec::with_capacity(r.len() - 1);
    for i in scenario.others() {
        let c = r[k] - r[i];
        if c.is_nan() {
            return Err(MteError::InvalidArgument(format!(
                "utility difference for treatment {i} is undefined"
            )));
        }
        values.push(scenario.laws().law(i).expect("non-baseline law").cdf(c));
    }
    Ok(ThresholdVector::new(k, values))
}

/// Hurdle indicators `S_i` and, for contrast `j`, `S*_i`; both treatment-indexed
/// with `None` where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct Hurdles {
    pub contrast: usize,
    pub s: Vec<Option<bool>>,
    pub s_star: Vec<Option<bool>>,
}

impl Hurdles {
    /// `prod_i S_i`.
    pub fn baseline_chosen(&self) -> bool {
        self.s.iter().flatten().all(|&b| b)
    }

    /// `(1 - S_j) prod_{i != k, j} S*_i`.
    pub fn contrast_chosen(&self) -> bool {
        !self.s[self.contrast].expect("contrast hurdle") && self.s_star.iter().flatten().all(|&b| b)
    }
}

/// Hurdle indicators at instrument point `z` for heterogeneity `v`
/// (non-baseline coordinates in treatment order).
pub fn hurdle_indicators(scenario: &Scenario, z: &[f64], v: &[f64], contrast: usize) -> Result<Hurdles> {
    let q = thresholds(scenario, z)?;
    hurdles_at(scenario, &q, v, contrast)
}

/// As [`hurdle_indicators`] with thresholds already computed.
pub fn hurdles_at(scenario: &Scenario, q: &ThresholdVector, v: &[f64], contrast: usize) -> Result<Hurdles> {
    let kk = scenario.treatments();
    let k = scenario.baseline();
    if v.len() != kk - 1 || q.values.len() != kk - 1 {
        return Err(MteError::Dimension {
            expected: kk - 1,
            got: v.len(),
        });
    }
    if contrast >= kk || contrast == k {
        return Err(MteError::IndexOutOfRange {
            index: contrast,
            len: kk,
        });
    }
    let laws = scenario.laws();
    let slot = |i: usize| if i < k { i } else { i - 1 };
    let mut s = vec![None; kk];
    for i in scenario.others() {
        s[i] = Some(v[slot(i)] < q.values[slot(i)]);
    }
    let quantile = |i: usize, p: f64| laws.law(i).expect("non-baseline law").quantile_closed(p);
    let j = contrast;
    let vj = v[slot(j)];
    if vj <= 0.0 || vj >= 1.0 {
        return Err(MteError::Boundary(vj));
    }
    let xj = quantile(j, vj)?;
    let cj = quantile(j, q.values[slot(j)])?;
    let mut s_star = vec![None; kk];
    for i in scenario.others() {
        if i == j {
            continue;
        }
        let arg = xj - cj + quantile(i, q.values[slot(i)])?;
        // Q_j = 1: the contrast never beats the baseline, so S*_i is moot
        let bound = match arg.is_nan() {
            true if cj == f64::INFINITY => 0.0,
            true => return Err(MteError::Boundary(q.values[slot(i)])),
            false => laws.law(i).expect("non-baseline law").cdf(arg),
        };
        s_star[i] = Some(v[slot(i)] < bound);
    }
    Ok(Hurdles {
        contrast: j,
        s,
        s_star,
    })
}

/// Treatment chosen according to the hurdle representation, or `None` when
/// the indicators select no treatment or more than one.
pub fn hurdle_choice(scenario: &Scenario, q: &ThresholdVector, v: &[f64]) -> Result<Option<usize>> {
    let mut chosen = Vec::new();
    let mut base_done = false;
    for j in scenario.others() {
        let h = hurdles_at(scenario, q, v, j)?;
        if !base_done {
            if h.baseline_chosen() {
                chosen.push(scenario.baseline());
            }
            base_done = true;
        }
        if h.contrast_chosen() {
            chosen.push(j);
        }
    }
    Ok(if chosen.len() == 1 { Some(chosen[0]) } else { None })
}

/// One disagreement between argmax and hurdle representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub draw: usize,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub latent: Vec<f64>,
    pub argmax: usize,
    pub hurdle: Option<usize>,
}

/// Outcome of [`verify_representation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub scenario: String,
    pub draws: usize,
    pub seed: u64,
    pub shares: Vec<f64>,
    /// Disagreements whose top latent utilities differ by less than the tie tolerance.
    pub near_ties: usize,
    pub mismatches: Vec<Mismatch>,
}

impl RepresentationReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Error carrying the first counterexample, if any.
    pub fn ensure_passed(&self) -> Result<()> {
        match self.mismatches.first() {
            None => Ok(()),
            Some(m) => Err(MteError::RepresentationMismatch {
                draw: m.draw,
                argmax: m.argmax,
                hurdle: m.hurdle,
            }),
        }
    }
}

/// Gap in latent utility below which a disagreement is attributed to rounding.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Compares argmax and hurdle choices on `n` draws of `(z, u)`.
pub fn verify_representation(scenario: &Scenario, n: usize, seed: u64) -> Result<RepresentationReport> {
    let kk = scenario.treatments();
    let chunks = n.div_ceil(CHUNK);
    let results: Vec<Result<(Vec<usize>, usize, Vec<Mismatch>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut counts = vec![0usize; kk];
            let mut ties = 0;
            let mut bad = Vec::new();
            let mut z = vec![0.0; scenario.instrument_dim()];
            let mut u = vec![0.0; kk];
            for draw in start..end {
                scenario.sample_instruments(&mut rng, &mut z);
                scenario.errors().sample_into(&mut rng, &mut u)?;
                let choice = choose(scenario, &z, &u)?;
                counts[choice.chosen] += 1;
                let q = thresholds(scenario, &z)?;
                let v = crate::distributions::v_from_u(&u, scenario.laws(), scenario.baseline())?;
                let hurdle = hurdle_choice(scenario, &q, &v)?;
                if hurdle != Some(choice.chosen) {
                    let mut sorted = choice.latent.clone();
                    sorted.sort_by(|a, b| b.total_cmp(a));
                    let scale = sorted[0].abs().max(1.0);
                    if sorted[0] - sorted[1] <= TIE_TOLERANCE * scale {
                        ties += 1;
                    } else {
                        bad.push(Mismatch {
                            draw,
                            z: z.clone(),
                            u: u.clone(),
                            latent: choice.latent.clone(),
                            argmax: choice.chosen,
                            hurdle,
                        });
                    }
                }
            }
            Ok((counts, ties, bad))
        })
        .collect();
    let mut counts = vec![0usize; kk];
    let mut near_ties = 0;
    let mut mismatches = Vec::new();
    for r in results {
        let (c, t, b) = r?;
        for (a, x) in counts.iter_mut().zip(c) {
            *a += x;
        }
        near_ties += t;
        mismatches.extend(b);
    }
    Ok(RepresentationReport {
        scenario: scenario.name().to_string(),
        draws: n,
        seed,
        shares: counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect(),
        near_ties,
        mismatches,
    })
}

/// Treatment shares from `n` simulated choices.
pub fn choice_shares(scenario: &Scenario, n: usize, seed: u64) -> Result<Vec<f64>> {
    let kk = scenario.treatments();
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<usize>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut counts = vec![0usize; kk];
            let mut z = vec![0.0; scenario.instrument_dim()];
            let mut u = vec![0.0; kk];
            for _ in 0..len {
                scenario.sample_instruments(&mut rng, &mut z);
                scenario.errors().sample_into(&mut rng, &mut u)?;
                counts[choose(scenario, &z, &u)?.chosen] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut counts = vec![0usize; kk];
    for p in parts {
        for (a, x) in counts.iter_mut().zip(p?) {
            *a += x;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / n.max(1) as f64).collect())
}

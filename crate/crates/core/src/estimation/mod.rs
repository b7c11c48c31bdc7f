//! Finite-sample harness: simulated observables `(Z, D, Y)`, kernel
//! estimates of `H`, thresholds and the boundary MTE.

pub mod kernel;
pub mod mte;
pub mod thresholds;

pub use kernel::{BandwidthRule, KernelKind, KernelSpec, LocalFit, LocalProblem};
pub use mte::{estimate_mte, BranchSlope, MteEstimate, MIN_BOUNDARY_EFFECTIVE};
pub use thresholds::{
    estimate_threshold, estimate_thresholds, observation_thresholds, ObservationThresholds, ThresholdEstimate,
    ThresholdEstimates, ThresholdGrid, ThresholdPoint,
};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MteError, Result};
use crate::io::{format_f64, write_atomic};
use crate::numerics::stream_rng;
use crate::population::ChoiceProbabilities;
use crate::selection::{choose, Scenario, CHUNK};

/// Smallest effective neighbour count accepted by `estimate_h`.
pub const MIN_EFFECTIVE: f64 = 10.0;

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a scenario's full specification.
pub fn scenario_fingerprint(scenario: &Scenario) -> String {
    sha256_hex(format!("{:?}", scenario.spec()).as_bytes())
}

/// Simulated observations; only the chosen arm's outcome is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub instrument_dim: usize,
    pub treatments: usize,
    pub baseline: usize,
    /// Row-major `n x instrument_dim`.
    pub z: Vec<f64>,
    pub d: Vec<usize>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub fingerprint: String,
}

/// Provenance stored next to a sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub n: usize,
    pub instrument_dim: usize,
    pub treatments: usize,
    pub baseline: usize,
    pub seed: u64,
    pub fingerprint: String,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.instrument_dim..(i + 1) * self.instrument_dim]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.z[i * self.instrument_dim + c]).collect()
    }

    pub fn shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.treatments];
        for &d in &self.d {
            counts[d] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.len().max(1) as f64).collect()
    }

    /// Fails unless every treatment is observed.
    pub fn check_shares(&self) -> Result<()> {
        if let Some(t) = self.shares().iter().position(|&s| s == 0.0) {
            return Err(MteError::InvalidArgument(format!("treatment {t} never observed in the sample")));
        }
        Ok(())
    }

    pub fn sidecar(&self) -> SampleSidecar {
        SampleSidecar {
            n: self.len(),
            instrument_dim: self.instrument_dim,
            treatments: self.treatments,
            baseline: self.baseline,
            seed: self.seed,
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// CSV body with columns `z1..zm,d,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=self.instrument_dim)
            .map(|c| format!("z{c}"))
            .chain(["d".to_string(), "y".to_string()])
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            for &z in self.z_row(i) {
                out.push_str(&format_f64(z));
                out.push(',');
            }
            out.push_str(&self.d[i].to_string());
            out.push(',');
            out.push_str(&format_f64(self.y[i]));
            out.push('\n');
        }
        out
    }

    fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes the CSV and its JSON sidecar atomically.
    pub fn write(&self, csv: &Path) -> Result<()> {
        write_atomic(csv, self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(&self.sidecar()).map_err(|e| MteError::Io(e.to_string()))?;
        write_atomic(&Self::sidecar_path(csv), json.as_bytes())
    }

    pub fn read(csv: &Path) -> Result<Self> {
        let side: SampleSidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(csv))?)
            .map_err(|e| MteError::Io(format!("bad sample sidecar: {e}")))?;
        let mut reader = csv::Reader::from_path(csv).map_err(|e| MteError::Io(e.to_string()))?;
        let m = side.instrument_dim;
        let headers = reader.headers().map_err(|e| MteError::Io(e.to_string()))?;
        if headers.len() != m + 2 {
            return Err(MteError::Io(format!("expected {} columns, found {}", m + 2, headers.len())));
        }
        let mut s = SampleSet {
            instrument_dim: m,
            treatments: side.treatments,
            baseline: side.baseline,
            z: Vec::with_capacity(side.n * m),
            d: Vec::with_capacity(side.n),
            y: Vec::with_capacity(side.n),
            seed: side.seed,
            fingerprint: side.fingerprint,
        };
        let bad = |e: String| MteError::Io(format!("bad sample row: {e}"));
        for rec in reader.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            for c in 0..m {
                s.z.push(rec[c].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?);
            }
            let d: usize = rec[m].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if d >= s.treatments {
                return Err(bad(format!("treatment {d} out of range")));
            }
            s.d.push(d);
            s.y.push(rec[m + 1].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?);
        }
        if s.len() != side.n {
            return Err(MteError::Io(format!("sidecar promises {} rows, found {}", side.n, s.len())));
        }
        Ok(s)
    }
}

/// `n` i.i.d. draws of `(Z, D, Y_D)`, reproducible from `seed`.
pub fn simulate(scenario: &Scenario, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(MteError::InvalidArgument("sample size must be positive".into()));
    }
    let m = scenario.instrument_dim();
    let kk = scenario.treatments();
    let parts: Vec<Result<(Vec<f64>, Vec<usize>, Vec<f64>)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let (mut zs, mut ds, mut ys) = (Vec::with_capacity(len * m), Vec::with_capacity(len), Vec::with_capacity(len));
            let mut z = vec![0.0; m];
            let mut u = vec![0.0; kk];
            for _ in 0..len {
                scenario.sample_instruments(&mut rng, &mut z);
                scenario.errors().sample_into(&mut rng, &mut u)?;
                let d = choose(scenario, &z, &u)?.chosen;
                let v = scenario.laws().v_from_u(&u)?;
                ys.push(scenario.sample_outcome(d, &v, &mut rng));
                zs.extend_from_slice(&z);
                ds.push(d);
            }
            Ok((zs, ds, ys))
        })
        .collect();
    let mut s = SampleSet {
        instrument_dim: m,
        treatments: kk,
        baseline: scenario.baseline(),
        z: Vec::with_capacity(n * m),
        d: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        seed,
        fingerprint: scenario_fingerprint(scenario),
    };
    for p in parts {
        let (z, d, y) = p?;
        s.z.extend(z);
        s.d.extend(d);
        s.y.extend(y);
    }
    Ok(s)
}

/// Kernel estimates of `P(D = m | z)` from a sample. Rows are indexed by the
/// first instrument coordinate so each fit only visits its window.
pub struct SampleProbabilities<'a> {
    sample: &'a SampleSet,
    spec: KernelSpec,
    bandwidths: Vec<f64>,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> SampleProbabilities<'a> {
    pub fn new(sample: &'a SampleSet, spec: KernelSpec) -> Result<Self> {
        if sample.is_empty() {
            return Err(MteError::InvalidArgument("empty sample".into()));
        }
        let columns: Vec<Vec<f64>> = (0..sample.instrument_dim).map(|c| sample.column(c)).collect();
        let bandwidths = spec.bandwidths(&columns)?;
        let mut order: Vec<usize> = (0..sample.len()).collect();
        order.sort_by(|&a, &b| columns[0][a].total_cmp(&columns[0][b]).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| columns[0][i]).collect();
        Ok(Self {
            sample,
            spec,
            bandwidths,
            order,
            keys,
        })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Local fit of the treatment indicators at `z`.
    pub fn fit(&self, z: &[f64]) -> Result<LocalFit> {
        let s = self.sample;
        if z.len() != s.instrument_dim {
            return Err(MteError::Dimension {
                expected: s.instrument_dim,
                got: z.len(),
            });
        }
        let reach = self.spec.kernel.radius() * self.bandwidths[0];
        let lo = self.keys.partition_point(|&k| k <= z[0] - reach);
        let hi = self.keys.partition_point(|&k| k < z[0] + reach);
        let reg = |i: usize, out: &mut [f64]| out.copy_from_slice(s.z_row(i));
        let resp = |i: usize, out: &mut [f64]| {
            out.fill(0.0);
            out[s.d[i]] = 1.0;
        };
        let problem = LocalProblem {
            regressors: &reg,
            responses: &resp,
            dim: s.instrument_dim,
            outputs: s.treatments,
            interactions: &[],
        };
        problem.fit(&self.order[lo..hi], z, &self.bandwidths, &self.spec, MIN_EFFECTIVE, false)
    }

    /// `H(z) = P(D = baseline | z)`, clipped to `[0, 1]`.
    pub fn h(&self, z: &[f64]) -> Result<f64> {
        Ok(self.fit(z)?.coefficients[self.sample.baseline][0].clamp(0.0, 1.0))
    }
}

impl ChoiceProbabilities for SampleProbabilities<'_> {
    fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.weighted_probabilities(z)?.0)
    }

    /// Weighted by the effective neighbour count.
    fn weighted_probabilities(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let fit = self.fit(z)?;
        Ok((fit.coefficients.iter().map(|c| c[0].clamp(0.0, 1.0)).collect(), fit.effective))
    }
}

/// Kernel regression of `1{D = baseline}` on `Z` at `z`.
pub fn estimate_h(sample: &SampleSet, z: &[f64], spec: KernelSpec) -> Result<f64> {
    SampleProbabilities::new(sample, spec)?.h(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::bundled;

    #[test]
    fn simulation_is_reproducible_and_rejects_empty() {
        let scn = bundled("figure1").unwrap().scenario().unwrap();
        assert!(simulate(&scn, 0, 1).is_err());
        let a = simulate(&scn, 20_000, 5).unwrap();
        let b = simulate(&scn, 20_000, 5).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        a.check_shares().unwrap();
        assert_ne!(a.to_csv(), simulate(&scn, 20_000, 6).unwrap().to_csv());
    }

    #[test]
    fn sample_round_trips_through_csv() {
        let scn = bundled("gaussian_linear").unwrap().scenario().unwrap();
        let s = simulate(&scn, 500, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        s.write(&path).unwrap();
        assert_eq!(SampleSet::read(&path).unwrap(), s);
    }

    #[test]
    fn constant_choice_gives_unit_h() {
        let s = SampleSet {
            instrument_dim: 1,
            treatments: 3,
            baseline: 1,
            z: (0..200).map(|i| i as f64 / 200.0).collect(),
            d: vec![1; 200],
            y: vec![0.0; 200],
            seed: 0,
            fingerprint: String::new(),
        };
        for order in [0, 1] {
            let spec = KernelSpec {
                order,
                ..KernelSpec::default()
            };
            assert!((estimate_h(&s, &[0.5], spec).unwrap() - 1.0).abs() < 1e-12);
            assert!(matches!(estimate_h(&s, &[50.0], spec), Err(MteError::SparseRegion { .. })));
        }
    }
}

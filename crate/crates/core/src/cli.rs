//! Experiment orchestration: commands, artifacts and run manifests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{bundled, ScenarioConfig};
use crate::counterexample::{assumption32_violation_report, support_cloud, VOLUME_DRAWS};
use crate::distributions::{joint_cdf_v, McOptions};
use crate::error::{MteError, Result};
use crate::estimation::{
    estimate_mte, estimate_thresholds, observation_thresholds, sha256_hex, simulate, SampleProbabilities,
};
use crate::io::{csv_table, write_atomic, write_json};
use crate::numerics::{ks_critical_1pct, ks_uniform, stream_rng};
use crate::population::{identify_thresholds_by_limit, invert_traced, BoundaryPoint, Population};
use crate::selection::{thresholds, verify_representation, GFunction, Scenario};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "MTE_LAB_THREADS";

/// Prefix selecting a scenario shipped with the crate instead of a file.
pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Verify,
    Figure1,
    Identify,
    Thresholds,
    Estimate,
    All,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Verify,
        Command::Figure1,
        Command::Identify,
        Command::Thresholds,
        Command::Estimate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Figure1 => "figure1",
            Command::Identify => "identify",
            Command::Thresholds => "thresholds",
            Command::Estimate => "estimate",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = MteError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .chain([Command::All])
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                MteError::InvalidArgument(format!(
                    "unknown command `{s}`; expected verify, figure1, identify, thresholds, estimate or all"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Config file path, or `bundled:<name>`.
    pub config: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Record of a run written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: Command,
    pub scenario: String,
    pub config_source: String,
    /// SHA-256 of the resolved `config.toml` stored beside the manifest.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub artifacts: Vec<String>,
    pub failures: Vec<String>,
    pub status: String,
}

/// Body of `error.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub status: String,
    pub command: String,
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    pub fn new(command: &str, e: &MteError) -> Self {
        Self {
            status: "error".into(),
            command: command.into(),
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    failures: Vec<String>,
}

impl Artifacts {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        self.text(name, &csv_table(header, rows))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.dir.join(name), value)?;
        self.files.push(name.into());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        write_atomic(&self.dir.join(name), body.as_bytes())?;
        self.files.push(name.into());
        Ok(())
    }

    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }
}

/// Reads a config file or a bundled scenario.
pub fn load_config(source: &str) -> Result<ScenarioConfig> {
    match source.strip_prefix(BUNDLED_PREFIX) {
        Some(name) => bundled(name),
        None => ScenarioConfig::load(Path::new(source)),
    }
}

/// Worker count from the flag, then the environment, then rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| MteError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Runs `command` and writes its artifacts plus `manifest.json` into the
/// output directory. Module check failures are listed in the manifest;
/// hard errors are returned.
pub fn run(command: Command, options: &RunOptions) -> Result<Manifest> {
    let threads = resolve_threads(options.threads)?;
    if threads == Some(0) {
        return Err(MteError::InvalidArgument("thread count must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| MteError::InvalidArgument(e.to_string()))?;
    pool.install(|| run_inner(command, options, pool.current_num_threads()))
}

fn run_inner(command: Command, options: &RunOptions, threads: usize) -> Result<Manifest> {
    let start = Instant::now();
    let mut cfg = load_config(&options.config)?;
    if let Some(s) = options.seed {
        cfg.seed = s;
    }
    let resolved = cfg.to_toml()?;
    let scn = cfg.scenario()?;
    std::fs::create_dir_all(&options.out)?;
    let mut art = Artifacts {
        dir: options.out.clone(),
        files: Vec::new(),
        failures: Vec::new(),
    };
    art.text("config.toml", &resolved)?;
    let config_hash = sha256_hex(resolved.as_bytes());
    match command {
        Command::All => {
            for c in Command::ALL {
                if c == Command::Figure1 && scn.treatments() != 3 {
                    continue;
                }
                if let Err(e) = dispatch(c, &cfg, &scn, &config_hash, &mut art) {
                    art.fail(format!("{c}: {} ({})", e, e.kind()));
                }
            }
        }
        c => dispatch(c, &cfg, &scn, &config_hash, &mut art)?,
    }
    let manifest = Manifest {
        command,
        scenario: cfg.name.clone(),
        config_source: options.config.clone(),
        config_hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        threads,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: art.files.clone(),
        status: if art.failures.is_empty() { "ok" } else { "failed" }.into(),
        failures: art.failures,
    };
    write_json(&options.out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn dispatch(c: Command, cfg: &ScenarioConfig, scn: &Scenario, hash: &str, art: &mut Artifacts) -> Result<()> {
    match c {
        Command::Verify => verify(cfg, scn, art),
        Command::Figure1 => figure1(cfg, scn, art),
        Command::Identify => identify(cfg, scn, art),
        Command::Thresholds => threshold_traces(cfg, scn, art),
        Command::Estimate => estimate(cfg, scn, hash, art),
        Command::All => unreachable!("expanded by the caller"),
    }
}

fn mc(cfg: &ScenarioConfig) -> McOptions {
    McOptions {
        draws: cfg.population.mc_draws,
        seed: cfg.seed,
    }
}

/// Uniformity of each `V_i` and the joint CDF at partially unit arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub treatment: usize,
    pub ks: f64,
    pub critical: f64,
}

fn verify(cfg: &ScenarioConfig, scn: &Scenario, art: &mut Artifacts) -> Result<()> {
    let n = cfg.draws.verify;
    let rep = verify_representation(scn, n, cfg.seed)?;
    if !rep.passed() {
        art.fail(format!("verify: {} representation mismatches", rep.mismatches.len()));
    }
    art.json("representation.json", &rep)?;
    art.csv(
        "shares.csv",
        &["treatment", "share"],
        &rep.shares.iter().enumerate().map(|(t, &s)| vec![t as f64, s]).collect::<Vec<_>>(),
    )?;
    let marginals = marginal_uniformity(scn, n, cfg.seed)?;
    for m in &marginals {
        if m.ks > m.critical {
            art.fail(format!("verify: V_{} fails uniformity (KS {} > {})", m.treatment, m.ks, m.critical));
        }
    }
    art.csv(
        "uniformity.csv",
        &["treatment", "ks", "critical_1pct"],
        &marginals.iter().map(|m| vec![m.treatment as f64, m.ks, m.critical]).collect::<Vec<_>>(),
    )?;
    let tol = cfg.tolerances.quadrature;
    let mut rows = Vec::new();
    let others = scn.others();
    let mut check = |slot: Option<usize>, q: f64, rows: &mut Vec<Vec<f64>>| -> Result<()> {
        let mut point = vec![1.0; others.len()];
        if let Some(s) = slot {
            point[s] = q;
        }
        let p = joint_cdf_v(scn.errors(), scn.laws(), &point, mc(cfg))?;
        let err = (p.value - q).abs();
        if err > tol.max(4.0 * p.se) {
            art.fail(format!("verify: joint CDF at {point:?} is {} (expected {q})", p.value));
        }
        rows.push(vec![slot.map_or(-1.0, |s| others[s] as f64), q, p.value, err, p.se]);
        Ok(())
    };
    for s in 0..others.len() {
        for &q in &cfg.grids.qstar {
            check(Some(s), q, &mut rows)?;
        }
    }
    check(None, 1.0, &mut rows)?;
    art.csv("joint_cdf.csv", &["treatment", "q", "value", "abs_error", "mc_se"], &rows)
}

/// KS statistic of each `V_i` over `n` error draws.
pub fn marginal_uniformity(scn: &Scenario, n: usize, seed: u64) -> Result<Vec<MarginalCheck>> {
    let mut rng = stream_rng(seed, u64::MAX);
    let kk = scn.treatments();
    let others = scn.others();
    let mut cols = vec![Vec::with_capacity(n); others.len()];
    let mut u = vec![0.0; kk];
    for _ in 0..n {
        scn.errors().sample_into(&mut rng, &mut u)?;
        let v = scn.laws().v_from_u(&u)?;
        for (c, &i) in cols.iter_mut().zip(&others) {
            c.push(v[i]);
        }
    }
    Ok(others
        .iter()
        .zip(&cols)
        .map(|(&i, c)| MarginalCheck {
            treatment: i,
            ks: ks_uniform(c),
            critical: ks_critical_1pct(n),
        })
        .collect())
}

fn figure1(cfg: &ScenarioConfig, scn: &Scenario, art: &mut Artifacts) -> Result<()> {
    if scn.treatments() != 3 {
        return Err(MteError::Config("figure1 needs exactly three treatments".into()));
    }
    let cloud = support_cloud(scn.errors(), cfg.draws.cloud, cfg.seed)?;
    if cloud.max_residual >= 1e-9 {
        art.fail(format!("figure1: quantile residual {} not below 1e-9", cloud.max_residual));
    }
    let rows: Vec<Vec<f64>> = cloud.points.iter().map(|p| vec![p.v01, p.v02, p.v12]).collect();
    art.csv("support_cloud.csv", &["v01", "v02", "v12"], &rows)?;
    let report = assumption32_violation_report(scn.errors(), VOLUME_DRAWS, cfg.seed)?;
    if !report.null_support {
        art.fail(format!("figure1: occupied volumes {:?} do not vanish", report.volumes));
    }
    if report.control_volumes.iter().any(|&v| v <= 0.9) {
        art.fail(format!("figure1: uniform control volumes {:?} not above 0.9", report.control_volumes));
    }
    art.json("violation_report.json", &report)
}

fn identify(cfg: &ScenarioConfig, scn: &Scenario, art: &mut Artifacts) -> Result<()> {
    let pop = Population::new(scn, cfg.population_settings())?;
    let g = cfg.g.to_g();
    let j = scn.contrast();
    let h = cfg.population.step;
    let tol = cfg.tolerances.mte;
    let mut mte_rows = Vec::new();
    let mut ext_rows = Vec::new();
    let mut qte_rows = Vec::new();
    let gs: Vec<GFunction> = cfg.grids.y.iter().map(|&y| GFunction::IndicatorBelow(y)).collect();
    for &q in &cfg.grids.qstar {
        let b = BoundaryPoint::new(j, q, cfg.population.delta)?;
        let m = pop.mte_identified(&g, &b, h)?;
        let (ok, oj) = pop.oracle_mte(&g, j, q)?;
        let errs = [
            (m.baseline.value - ok).abs(),
            (m.contrast_value.value - oj).abs(),
            (m.mte - (ok - oj)).abs(),
        ];
        if errs.iter().any(|&e| e > tol) {
            art.fail(format!("identify: q* = {q} recovery errors {errs:?} exceed {tol}"));
        }
        mte_rows.push(vec![
            q,
            m.baseline.value,
            m.contrast_value.value,
            m.mte,
            ok - oj,
            errs[2],
            ok,
            oj,
            m.step,
            m.baseline.richardson_gap.max(m.contrast_value.richardson_gap),
        ]);
        for t in [scn.baseline(), j] {
            match pop.extended_cond_mean_gd(&g, t, &b, q) {
                Ok(e) => ext_rows.push(vec![q, t as f64, e.value, e.extrapolated, e.gap, e.path_gap]),
                Err(e) => art.fail(format!("identify: extension at q* = {q}, treatment {t}: {e}")),
            }
        }
        if cfg.grids.tau.is_empty() {
            continue;
        }
        let rep = pop.qte(&b, cfg.grids.tau[0], &cfg.grids.y, h);
        let oracle_cdf = |t: usize| -> Result<Vec<f64>> {
            Ok(pop.conditional_mean_oracle(&gs, t, j, q)?.iter().map(|e| e.value).collect())
        };
        let (fk, fj) = (oracle_cdf(scn.baseline())?, oracle_cdf(j)?);
        match rep {
            Ok(r) => {
                for &tau in &cfg.grids.tau {
                    let row = (|| -> Result<Vec<f64>> {
                        let qk = invert_traced(&r.y_grid, &r.cdf_baseline, tau)?;
                        let qj = invert_traced(&r.y_grid, &r.cdf_contrast, tau)?;
                        let ok = invert_traced(&cfg.grids.y, &monotone(&fk), tau)?;
                        let oj = invert_traced(&cfg.grids.y, &monotone(&fj), tau)?;
                        Ok(vec![q, tau, qk, qj, qk - qj, ok - oj])
                    })();
                    match row {
                        Ok(r) => qte_rows.push(r),
                        Err(e) => art.fail(format!("identify: QTE at q* = {q}, tau = {tau}: {e}")),
                    }
                }
            }
            Err(e) => art.fail(format!("identify: QTE at q* = {q}: {e}")),
        }
    }
    art.csv(
        "mte_curve.csv",
        &[
            "qstar",
            "recovered_k",
            "recovered_j",
            "mte",
            "oracle_mte",
            "abs_error",
            "oracle_k",
            "oracle_j",
            "step",
            "richardson_gap",
        ],
        &mte_rows,
    )?;
    art.csv(
        "extension.csv",
        &["qstar", "treatment", "boundary", "extrapolated", "gap", "path_gap"],
        &ext_rows,
    )?;
    art.csv(
        "qte_curve.csv",
        &["qstar", "tau", "quantile_baseline", "quantile_contrast", "qte", "qte_oracle"],
        &qte_rows,
    )
}

fn monotone(f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut m: f64 = 0.0;
    for &x in f {
        m = m.max(x.clamp(0.0, 1.0));
        out.push(m);
    }
    out
}

/// Instrument points from the config, or five draws from the instrument law.
fn z_points(cfg: &ScenarioConfig, scn: &Scenario) -> Vec<Vec<f64>> {
    if !cfg.grids.z_points.is_empty() {
        return cfg.grids.z_points.clone();
    }
    let mut rng = stream_rng(cfg.seed, u64::MAX - 1);
    (0..5)
        .map(|_| {
            let mut z = vec![0.0; scn.instrument_dim()];
            scn.sample_instruments(&mut rng, &mut z);
            z
        })
        .collect()
}

fn threshold_traces(cfg: &ScenarioConfig, scn: &Scenario, art: &mut Artifacts) -> Result<()> {
    let schedule = cfg.schedule();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (p, z) in z_points(cfg, scn).iter().enumerate() {
        let rep = identify_thresholds_by_limit(scn, z, &schedule, mc(cfg))?;
        for t in &rep.traces {
            if t.abs_error > cfg.tolerances.threshold {
                art.fail(format!(
                    "thresholds: point {p}, Q_{} recovered {} vs {}",
                    t.target, t.limit, t.truth
                ));
            }
            for (s, &h) in t.h.iter().enumerate() {
                rows.push(vec![p as f64, t.target as f64, (s + 1) as f64, h, t.limit, t.truth]);
            }
        }
        reports.push(rep);
    }
    art.csv("threshold_traces.csv", &["point", "target", "step", "h", "limit", "truth"], &rows)?;
    art.json("thresholds.json", &reports)
}

/// Summary of `estimate` written as `mte_estimate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub n: usize,
    pub qstar: f64,
    pub population_mte: f64,
    pub estimate: crate::estimation::MteEstimate,
    pub replications: usize,
    pub replication_mean: f64,
    pub replication_sd: f64,
    pub within_three_sd: bool,
    pub threshold_warnings: Vec<String>,
}

fn estimate(cfg: &ScenarioConfig, scn: &Scenario, hash: &str, art: &mut Artifacts) -> Result<()> {
    let est = &cfg.estimation;
    let spec = est.kernel_spec();
    let schedule = est.schedule();
    let mut sample = simulate(scn, est.n, cfg.seed)?;
    sample.fingerprint = hash.to_string();
    sample.write(&art.dir.join("sample.csv"))?;
    art.files.extend(["sample.csv".to_string(), "sample.json".to_string()]);
    let probs = SampleProbabilities::new(&sample, spec)?;
    let mut h_rows = Vec::new();
    let mut q_rows = Vec::new();
    for (p, z) in z_points(cfg, scn).iter().enumerate() {
        let q = thresholds(scn, z)?;
        let truth = joint_cdf_v(scn.errors(), scn.laws(), &q.values, mc(cfg))?.value;
        let hhat = probs.h(z)?;
        h_rows.push(vec![p as f64, hhat, truth, (hhat - truth).abs()]);
        let e = estimate_thresholds(&probs, scn, z, &schedule)?;
        for t in &e.targets {
            let tv = q.get(t.target).expect("threshold");
            q_rows.push(vec![
                p as f64,
                t.target as f64,
                t.estimate,
                tv,
                (t.estimate - tv).abs(),
                t.points.len() as f64,
                if t.truncated { 1.0 } else { 0.0 },
            ]);
        }
    }
    art.csv("h_estimates.csv", &["point", "h_hat", "h_true", "abs_error"], &h_rows)?;
    art.csv(
        "threshold_estimates.csv",
        &["point", "target", "estimate", "truth", "abs_error", "steps", "truncated"],
        &q_rows,
    )?;
    let g = cfg.g.to_g();
    let b = BoundaryPoint::new(scn.contrast(), est.qstar, cfg.population.delta)?;
    let pop = Population::new(scn, cfg.population_settings())?;
    let population_mte = pop.mte_identified(&g, &b, cfg.population.step)?.mte;
    let fit = |s: &crate::estimation::SampleSet| -> Result<(crate::estimation::MteEstimate, Vec<String>)> {
        let probs = SampleProbabilities::new(s, spec)?;
        let ot = observation_thresholds(&probs, s, scn, &schedule, est.threshold_grid, &spec)?;
        Ok((estimate_mte(s, scn, &g, &b, &spec, &ot)?, ot.warnings))
    };
    let (main, warnings) = fit(&sample)?;
    let mut reps = Vec::new();
    let mut rep_rows = Vec::new();
    for r in 0..est.replications {
        let seed = cfg.seed.wrapping_add(1 + r as u64);
        let (m, _) = fit(&simulate(scn, est.n, seed)?)?;
        rep_rows.push(vec![r as f64, seed as f64, m.mte, m.se, m.offset_mte]);
        reps.push(m.mte);
    }
    art.csv("mte_replications.csv", &["replication", "seed", "mte", "se", "offset_mte"], &rep_rows)?;
    let (mean, sd) = mean_sd(&reps);
    let within = reps.len() < 2 || (main.mte - population_mte).abs() <= 3.0 * sd;
    if !within {
        art.fail(format!(
            "estimate: MTE {} more than three replication SDs ({sd}) from the population value {population_mte}",
            main.mte
        ));
    }
    art.json(
        "mte_estimate.json",
        &EstimateSummary {
            n: est.n,
            qstar: est.qstar,
            population_mte,
            estimate: main,
            replications: reps.len(),
            replication_mean: mean,
            replication_sd: sd,
            within_three_sd: within,
            threshold_warnings: warnings,
        },
    )
}

/// Mean and sample standard deviation.
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    (mean, (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

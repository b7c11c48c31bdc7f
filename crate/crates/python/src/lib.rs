//! Python bindings: scenario configs, population identification, simulation,
//! estimation and the command pipeline. Structured results come back as dicts.

use std::path::PathBuf;

use mte_core::cli::{self, Command, RunOptions};
use mte_core::config::{bundled, ScenarioConfig, BUNDLED};
use mte_core::counterexample::{assumption32_violation_report, support_cloud, VOLUME_DRAWS};
use mte_core::distributions::McOptions;
use mte_core::estimation::{self, observation_thresholds, SampleProbabilities, SampleSet};
use mte_core::population::{identify_thresholds_by_limit, BoundaryPoint, Population};
use mte_core::selection::{self, Scenario};
use mte_core::MteError;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(mte_lab, MteLabError, PyException);

fn err(e: MteError) -> PyErr {
    MteLabError::new_err(e.to_string())
}

/// Serializes through JSON so nested reports arrive as plain Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MteLabError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A validated scenario configuration.
#[pyclass(name = "ScenarioConfig", module = "mte_lab")]
struct PyConfig {
    config: ScenarioConfig,
    scenario: Scenario,
}

impl PyConfig {
    fn wrap(config: ScenarioConfig) -> PyResult<Self> {
        let scenario = config.scenario().map_err(err)?;
        Ok(Self { config, scenario })
    }

    fn boundary(&self, qstar: Option<f64>, delta: Option<f64>) -> PyResult<BoundaryPoint> {
        BoundaryPoint::new(
            self.scenario.contrast(),
            qstar.unwrap_or(self.config.estimation.qstar),
            delta.unwrap_or(self.config.population.delta),
        )
        .map_err(err)
    }
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        Self::wrap(bundled(name).map_err(err)?)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::wrap(ScenarioConfig::from_toml(text).map_err(err)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(ScenarioConfig::load(&path).map_err(err)?)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.config.to_toml().map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.scenario.name().to_string()
    }

    #[getter]
    fn treatments(&self) -> usize {
        self.scenario.treatments()
    }

    #[getter]
    fn baseline(&self) -> usize {
        self.scenario.baseline()
    }

    #[getter]
    fn contrast(&self) -> usize {
        self.scenario.contrast()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Thresholds indexed by treatment, NaN at the baseline.
    fn thresholds(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(selection::thresholds(&self.scenario, &z).map_err(err)?.by_treatment())
    }

    fn choice_shares(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        py.detach(|| selection::choice_shares(&self.scenario, n, seed)).map_err(err)
    }

    fn verify_representation(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| selection::verify_representation(&self.scenario, n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Summary of the latent-index support cloud (points omitted).
    fn support_cloud(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let c = py
            .detach(|| support_cloud(self.scenario.errors(), n, seed))
            .map_err(err)?;
        to_py(
            py,
            &serde_json::json!({
                "points": c.points.len(),
                "max_residual": c.max_residual,
                "occupied_fraction": c.occupied_fraction,
            }),
        )
    }

    #[pyo3(signature = (n = VOLUME_DRAWS, seed = 0))]
    fn violation_report(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| assumption32_violation_report(self.scenario.errors(), n, seed))
            .map_err(err)?;
        to_py(py, &r)
    }

    fn threshold_limits(&self, py: Python<'_>, z: Vec<f64>) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| identify_thresholds_by_limit(&self.scenario, &z, &self.config.schedule(), McOptions::default()))
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Population MTE recovered at the boundary `V_contrast = qstar`.
    #[pyo3(signature = (qstar = None, delta = None))]
    fn mte_identified(&self, py: Python<'_>, qstar: Option<f64>, delta: Option<f64>) -> PyResult<Py<PyAny>> {
        let b = self.boundary(qstar, delta)?;
        let g = self.config.g.to_g();
        let r = py
            .detach(|| {
                let pop = Population::new(&self.scenario, self.config.population_settings())?;
                pop.mte_report(&g, &b, None)
            })
            .map_err(err)?;
        to_py(py, &r)
    }

    /// Population quantile effect at level `tau` on the config's outcome grid.
    #[pyo3(signature = (tau, qstar = None))]
    fn qte(&self, py: Python<'_>, tau: f64, qstar: Option<f64>) -> PyResult<Py<PyAny>> {
        let b = self.boundary(qstar, None)?;
        let r = py
            .detach(|| {
                let pop = Population::new(&self.scenario, self.config.population_settings())?;
                pop.qte(&b, tau, &self.config.grids.y, None)
            })
            .map_err(err)?;
        to_py(py, &r)
    }

    fn simulate(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<PySample> {
        let sample = py.detach(|| estimation::simulate(&self.scenario, n, seed)).map_err(err)?;
        Ok(PySample { sample })
    }
}

/// A simulated sample of `(Z, D, Y)`.
#[pyclass(name = "Sample", module = "mte_lab")]
struct PySample {
    sample: SampleSet,
}

#[pymethods]
impl PySample {
    fn __len__(&self) -> usize {
        self.sample.len()
    }

    fn shares(&self) -> Vec<f64> {
        self.sample.shares()
    }

    fn to_csv(&self) -> String {
        self.sample.to_csv()
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.sample.write(&path).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            sample: SampleSet::read(&path).map_err(err)?,
        })
    }

    /// Kernel estimate of `P(D = baseline | Z = z)`.
    fn h(&self, config: &PyConfig, z: Vec<f64>) -> PyResult<f64> {
        estimation::estimate_h(&self.sample, &z, config.config.estimation.kernel_spec()).map_err(err)
    }

    /// Local MTE estimate with sandwich standard error.
    #[pyo3(signature = (config, qstar = None))]
    fn estimate_mte(&self, py: Python<'_>, config: &PyConfig, qstar: Option<f64>) -> PyResult<Py<PyAny>> {
        let b = config.boundary(qstar, None)?;
        let est = &config.config.estimation;
        let spec = est.kernel_spec();
        let g = config.config.g.to_g();
        let scn = &config.scenario;
        let r = py
            .detach(|| {
                let probs = SampleProbabilities::new(&self.sample, spec)?;
                let ot = observation_thresholds(&probs, &self.sample, scn, &est.schedule(), est.threshold_grid, &spec)?;
                estimation::estimate_mte(&self.sample, scn, &g, &b, &spec, &ot)
            })
            .map_err(err)?;
        to_py(py, &r)
    }
}

#[pyfunction]
fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Runs a pipeline command and returns its manifest.
#[pyfunction]
#[pyo3(signature = (command, config = "bundled:figure1", out = "out", seed = None, threads = None))]
fn run(
    py: Python<'_>,
    command: &str,
    config: &str,
    out: &str,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let command: Command = command.parse().map_err(err)?;
    let options = RunOptions {
        config: config.to_string(),
        out: PathBuf::from(out),
        seed,
        threads,
    };
    let manifest = py.detach(|| cli::run(command, &options)).map_err(err)?;
    to_py(py, &manifest)
}

#[pymodule]
fn mte_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MteLabError", m.py().get_type::<MteLabError>())?;
    m.add("VOLUME_DRAWS", VOLUME_DRAWS)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(bundled_names, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

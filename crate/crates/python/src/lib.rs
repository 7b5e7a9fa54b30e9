//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the stdlib `json` module, so the Python side sees plain
//! dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use tvbo_core::harness::{aggregate, BanditExperimentConfig, BoExperimentConfig};
use tvbo_core::strategy;
use tvbo_core::tuner::{self, TunerInit};
use tvbo_core::{CompositeKernel, Domain, ObservationSet, SpatialFamily, SpatialKernel, TemporalKernel};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn spatial(family: &str, lengthscale: f64, amplitude: f64) -> PyResult<SpatialKernel> {
    let family: SpatialFamily = serde_json::from_value(serde_json::Value::String(family.into()))
        .map_err(|_| value_err(format!("unknown kernel family {family:?}")))?;
    SpatialKernel::new(family, lengthscale, amplitude).map_err(value_err)
}

/// Spatial kernel value `k(x, y)`.
#[pyfunction]
#[pyo3(signature = (x, y, family="matern32", lengthscale=0.2, amplitude=1.0))]
fn kernel(x: Vec<f64>, y: Vec<f64>, family: &str, lengthscale: f64, amplitude: f64) -> PyResult<f64> {
    spatial(family, lengthscale, amplitude)?.eval(&x, &y).map_err(value_err)
}

/// Spatio-temporal Gram matrix over `(point, round)` pairs, as nested lists.
#[pyfunction]
#[pyo3(signature = (points, rounds, family="matern32", lengthscale=0.2, amplitude=1.0, epsilon=0.0))]
fn gram(
    points: Vec<Vec<f64>>,
    rounds: Vec<u64>,
    family: &str,
    lengthscale: f64,
    amplitude: f64,
    epsilon: f64,
) -> PyResult<Vec<Vec<f64>>> {
    if points.len() != rounds.len() {
        return Err(value_err("points and rounds differ in length"));
    }
    let k = composite(family, lengthscale, amplitude, epsilon)?;
    let pts: Vec<_> = points
        .into_iter()
        .zip(rounds)
        .map(|(x, t)| tvbo_core::SpaceTimePoint::new(x, t))
        .collect();
    let g = k.gram(&pts).map_err(value_err)?;
    Ok(g.row_iter().map(|r| r.iter().copied().collect()).collect())
}

fn composite(family: &str, lengthscale: f64, amplitude: f64, epsilon: f64) -> PyResult<CompositeKernel> {
    let t = TemporalKernel::new(epsilon).map_err(value_err)?;
    CompositeKernel::new(spatial(family, lengthscale, amplitude)?, t).map_err(value_err)
}

/// Posterior means and stddevs over `candidates` for acting at `now + 1`.
#[pyfunction]
#[pyo3(signature = (xs, ys, rounds, candidates, now, family="matern32", lengthscale=0.2, amplitude=1.0, epsilon=0.0, noise_variance=0.01))]
#[allow(clippy::too_many_arguments)]
fn posterior(
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    rounds: Vec<u64>,
    candidates: Vec<Vec<f64>>,
    now: u64,
    family: &str,
    lengthscale: f64,
    amplitude: f64,
    epsilon: f64,
    noise_variance: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if xs.len() != ys.len() || xs.len() != rounds.len() {
        return Err(value_err("xs, ys and rounds differ in length"));
    }
    let k = composite(family, lengthscale, amplitude, epsilon)?;
    let mut obs = ObservationSet::new(noise_variance).map_err(value_err)?;
    for ((x, y), t) in xs.into_iter().zip(ys).zip(rounds) {
        obs.push(x, y, t).map_err(value_err)?;
    }
    let domain = Domain::from_points(&candidates).map_err(value_err)?;
    let post = tvbo_core::posterior(&k, &obs, &domain, now).map_err(value_err)?;
    Ok((post.means, post.stddevs))
}

/// `P(y_a > y_b)` for independent Gaussians.
#[pyfunction]
fn superiority(mean_a: f64, var_a: f64, mean_b: f64, var_b: f64) -> f64 {
    strategy::superiority_probability(mean_a, var_a, mean_b, var_b)
}

fn load<T: serde::de::DeserializeOwned + Default>(config: Option<&str>) -> PyResult<T> {
    match config {
        Some(text) => toml::from_str(text).map_err(value_err),
        None => Ok(T::default()),
    }
}

/// Runs the synthetic BO benchmark and returns the aggregate report.
/// `config` is TOML text; omitted keys take their defaults.
#[pyfunction]
#[pyo3(signature = (config=None, trials=None, seed=None))]
fn run_synth_bo(py: Python<'_>, config: Option<&str>, trials: Option<usize>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let mut cfg: BoExperimentConfig = load(config)?;
    cfg.trials = trials.unwrap_or(cfg.trials);
    cfg.base_seed = seed.unwrap_or(cfg.base_seed);
    let records = py.detach(|| cfg.run()).map_err(value_err)?;
    to_py(py, &aggregate(&records))
}

/// Runs the bandit benchmark; returns `{scenario: report}`.
#[pyfunction]
#[pyo3(signature = (config=None, trials=None, seed=None))]
fn run_synth_bandit(py: Python<'_>, config: Option<&str>, trials: Option<usize>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let mut cfg: BanditExperimentConfig = load(config)?;
    cfg.trials = trials.unwrap_or(cfg.trials);
    cfg.base_seed = seed.unwrap_or(cfg.base_seed);
    let results = py.detach(|| cfg.run()).map_err(value_err)?;
    let reports: std::collections::BTreeMap<String, _> =
        results.into_iter().map(|(name, records)| (name, aggregate(&records))).collect();
    to_py(py, &reports)
}

/// One suggest/observe session. `config` is the JSON body of an `init`.
#[pyclass(name = "TunerSession", unsendable)]
struct PyTunerSession {
    inner: tuner::TunerSession,
}

#[pymethods]
impl PyTunerSession {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let init: TunerInit = match config {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => TunerInit::default(),
        };
        Ok(Self {
            inner: tuner::TunerSession::new(init).map_err(value_err)?,
        })
    }

    fn suggest(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = self.inner.suggest().map_err(value_err)?;
        to_py(py, &s)
    }

    /// Returns the stored (possibly clipped) reward.
    fn observe(&mut self, round: u64, reward: f64) -> PyResult<f64> {
        self.inner
            .observe(round, reward)
            .map_err(|e| value_err(format!("{}: {}", e.code, e.message)))
    }

    fn snapshot(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = self.inner.snapshot().map_err(value_err)?;
        to_py(py, &s)
    }

    #[getter]
    fn round(&self) -> u64 {
        self.inner.round()
    }

    #[getter]
    fn cost(&self) -> u64 {
        self.inner.cost()
    }

    #[getter]
    fn candidates(&self) -> Vec<Vec<f64>> {
        self.inner.candidates().to_vec()
    }
}

/// Line-level protocol server, the same one `tvbo tune` runs.
#[pyclass(name = "TunerServer", unsendable)]
struct PyTunerServer {
    inner: tuner::TunerServer,
}

#[pymethods]
impl PyTunerServer {
    #[new]
    fn new() -> Self {
        Self {
            inner: tuner::TunerServer::new(),
        }
    }

    fn handle_line(&mut self, line: &str) -> String {
        self.inner.handle_line(line)
    }
}

#[pymodule]
fn tvbo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kernel, m)?)?;
    m.add_function(wrap_pyfunction!(gram, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(superiority, m)?)?;
    m.add_function(wrap_pyfunction!(run_synth_bo, m)?)?;
    m.add_function(wrap_pyfunction!(run_synth_bandit, m)?)?;
    m.add_class::<PyTunerSession>()?;
    m.add_class::<PyTunerServer>()?;
    Ok(())
}

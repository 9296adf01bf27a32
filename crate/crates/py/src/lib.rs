//! Python bindings for vai-core.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vai_core::envs::{build_env, Env as CoreEnv, EnvSnapshot};
use vai_core::harness::config::EnvSection;
use vai_core::learn::checkpoint::Checkpoint;
use vai_core::mf::{self, ActionDist};
use vai_core::robust::{self, RobustValueModel};
use vai_core::select;
use vai_core::VaiError;

fn py_err(e: VaiError) -> PyErr {
    match e {
        VaiError::InvalidInput(_) | VaiError::InvalidConfig(_) | VaiError::ConfigParse { .. } | VaiError::CapExceeded { .. } => {
            PyValueError::new_err(e.to_string())
        }
        VaiError::StageDependency { .. } => PyFileNotFoundError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn dist(p: Vec<f64>) -> PyResult<ActionDist> {
    ActionDist::new(p).map_err(py_err)
}

/// A desk environment with its current state.
#[pyclass(name = "Env", unsendable)]
struct PyEnv {
    inner: Box<dyn CoreEnv>,
    snap: EnvSnapshot,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (name, n_agents, horizon=30, seed=0))]
    fn new(name: &str, n_agents: usize, horizon: usize, seed: u64) -> PyResult<Self> {
        let sec = EnvSection {
            name: name.to_string(),
            n_agents,
            horizon,
            ..Default::default()
        };
        let inner = build_env(&sec).map_err(py_err)?;
        let snap = inner.reset(seed).map_err(py_err)?;
        Ok(Self { inner, snap })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Local state of every agent.
    #[getter]
    fn states(&self) -> Vec<usize> {
        self.snap.states.iter().map(|s| s.0).collect()
    }

    /// Empirical mean-field state.
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.snap.mu.probs().to_vec()
    }

    fn reset(&mut self, seed: u64) -> PyResult<Vec<usize>> {
        self.snap = self.inner.reset(seed).map_err(py_err)?;
        Ok(self.states())
    }

    /// Advances one step; returns (shared reward, new local states).
    fn step(&mut self, actions: Vec<usize>) -> PyResult<(f64, Vec<usize>)> {
        let r = self.inner.step(&self.snap, &actions).map_err(py_err)?;
        self.snap = r.snapshot;
        Ok((r.reward, self.states()))
    }

    fn observation_graph(&self, radius: f64) -> PyResult<Vec<Vec<bool>>> {
        self.inner.observation_graph(&self.snap, radius).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Env({}, n_agents={}, horizon={})", self.inner.name(), self.inner.n_agents(), self.inner.horizon())
    }
}

/// Budget-conditioned robust value loaded from a value checkpoint.
#[pyclass(name = "ValueModel")]
struct PyValueModel {
    inner: RobustValueModel,
}

#[pymethods]
impl PyValueModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = Checkpoint::load(&path).map_err(py_err)?;
        Ok(Self {
            inner: RobustValueModel::from_checkpoint(&c).map_err(py_err)?,
        })
    }

    /// Budget-insensitive model with one value per state.
    #[staticmethod]
    #[pyo3(signature = (values, gamma=0.95))]
    fn constant(values: Vec<f64>, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: RobustValueModel::constant(values.len(), gamma, &values).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    fn value(&self, s: usize, mu: Vec<f64>, eps: f64, xi: f64) -> PyResult<f64> {
        if s >= self.inner.n_states() {
            return Err(PyValueError::new_err(format!("state {s} out of range {}", self.inner.n_states())));
        }
        Ok(self.inner.value(s, &mu, eps, xi))
    }
}

#[pyfunction]
fn lp_norm(v: Vec<f64>, p: f64) -> PyResult<f64> {
    mf::lp_norm(&v, p).map_err(py_err)
}

#[pyfunction]
fn dual_order(p: f64) -> PyResult<f64> {
    mf::dual_order(p).map_err(py_err)
}

/// ξ for per-agent budgets.
#[pyfunction]
fn aggregate_budget(eps: Vec<f64>) -> PyResult<f64> {
    mf::aggregate_budget(&eps).map_err(py_err)
}

#[pyfunction]
fn mix_policies(pi_alpha: Vec<f64>, pi_beta: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    let m = mf::mix_policies(&dist(pi_alpha)?, &dist(pi_beta)?, eps).map_err(py_err)?;
    Ok(m.probs().to_vec())
}

#[pyfunction]
fn check_deviation_bound(pi_hat: Vec<f64>, pi_beta: Vec<f64>, eps: f64, p: f64) -> PyResult<bool> {
    mf::check_deviation_bound(&dist(pi_hat)?, &dist(pi_beta)?, eps, p).map_err(py_err)
}

#[pyfunction]
fn hoeffding_bound(n: usize, delta: f64) -> f64 {
    mf::hoeffding_bound(n, delta)
}

#[pyfunction]
fn budget_weight(eps: f64, xi: f64) -> f64 {
    robust::budget_weight(eps, xi)
}

/// (closed_form, grid_search) worst-case gap for one Q row.
#[pyfunction]
#[pyo3(signature = (row, eps, xi, p=f64::INFINITY, grid=101))]
fn worst_case_gap(row: Vec<f64>, eps: f64, xi: f64, p: f64, grid: usize) -> PyResult<(f64, f64)> {
    robust::worst_case_gap_row(&row, eps, xi, p, grid).map_err(py_err)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    vai_core::harness::pearson(&xs, &ys).map_err(py_err)
}

#[pyfunction]
fn select_random(n: usize, k: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(select::select_random(n, k, seed).map_err(py_err)?.ids)
}

/// Greedy attack set for the env's current state; returns (ids, per-step rewards).
#[pyfunction]
fn select_greedy(value: &PyValueModel, env: &PyEnv, k: usize, eps: f64) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let set = select::select_greedy(&value.inner, &env.snap, k, eps).map_err(py_err)?;
    Ok((set.ids, set.rewards))
}

#[pyfunction]
fn predicted_drop(value: &PyValueModel, env: &PyEnv, ids: Vec<usize>, eps: f64) -> PyResult<f64> {
    select::predicted_drop(&value.inner, &env.snap, &ids, eps).map_err(py_err)
}

/// Runs every pipeline stage for a TOML config; returns the ledger path.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run_pipeline(py: Python<'_>, config: PathBuf, out: Option<PathBuf>) -> PyResult<String> {
    let path = py.detach(|| vai_core::harness::run_pipeline(&config, out)).map_err(py_err)?;
    Ok(path.display().to_string())
}

#[pymodule]
fn vai(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyValueModel>()?;
    m.add_function(wrap_pyfunction!(lp_norm, m)?)?;
    m.add_function(wrap_pyfunction!(dual_order, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_budget, m)?)?;
    m.add_function(wrap_pyfunction!(mix_policies, m)?)?;
    m.add_function(wrap_pyfunction!(check_deviation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_bound, m)?)?;
    m.add_function(wrap_pyfunction!(budget_weight, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_gap, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(select_random, m)?)?;
    m.add_function(wrap_pyfunction!(select_greedy, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_drop, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}

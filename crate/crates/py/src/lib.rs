//! Python bindings.
//!
//! Results that are naturally records (tuning reports, solver outcomes,
//! certificates) come back as plain dicts decoded from JSON.

use std::path::PathBuf;

use gneflex_core::config::load_config;
use gneflex_core::fixtures::{self, Fixture};
use gneflex_core::market::{self, build_feasible_set, check_feasibility};
use gneflex_core::oracle::{self as vgne, OracleOptions};
use gneflex_core::runner::{self, RunOptions};
use gneflex_core::solver::{DistributedSolver, InitialState, StopCriteria};
use gneflex_core::tuning::{self, DEFAULT_SAFETY};
use gneflex_core::{AggregatorParams, CommGraph, GainSet, GameModel, GneError, Line, MarketInstance};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde_json::{json, Value};

create_exception!(gneflex, GneflexError, PyValueError);

fn err(e: GneError) -> PyErr {
    GneflexError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

/// A market instance together with its communication graph.
#[pyclass(name = "Problem", module = "gneflex", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: Fixture,
}

impl PyProblem {
    fn game(&self) -> GameModel {
        GameModel::new(self.inner.instance.clone())
    }

    fn gains(&self) -> Result<GainSet, GneError> {
        let inst = &self.inner.instance;
        let rep = tuning::cocoercivity_constants(inst, &self.inner.graph, tuning::default_kappa(inst)?)?;
        tuning::default_gains(&rep, &build_feasible_set(inst), &self.inner.graph, DEFAULT_SAFETY)
    }
}

#[pymethods]
impl PyProblem {
    /// `agents` holds `(a, b, e, xhat)` tuples, `lines` holds `(pi, fhat)`
    /// pairs and `edges` holds 0-based `(i, j, weight)` triples.
    #[new]
    #[pyo3(signature = (r, alpha, beta_min, beta_max, agents, edges, lines=Vec::new()))]
    fn new(
        r: f64,
        alpha: f64,
        beta_min: f64,
        beta_max: f64,
        agents: Vec<(f64, f64, f64, f64)>,
        edges: Vec<(usize, usize, f64)>,
        lines: Vec<(Vec<f64>, f64)>,
    ) -> PyResult<Self> {
        let agents = agents
            .into_iter()
            .map(|(a, b, e, xhat)| AggregatorParams { a, b, e, xhat })
            .collect::<Vec<_>>();
        let lines = lines.into_iter().map(|(pi, fhat)| Line { pi, fhat }).collect();
        let n = agents.len();
        let instance = MarketInstance::new(r, alpha, beta_min, beta_max, agents, lines).map_err(err)?;
        let graph = CommGraph::new(n, &edges).map_err(err)?;
        Ok(Self {
            inner: Fixture {
                name: "custom".into(),
                instance,
                graph,
            },
        })
    }

    /// One of `"t2"`, `"t2i"`, `"cs5"`.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        let inner = match name {
            "t2" => fixtures::t2(),
            "t2i" => fixtures::t2i(),
            "cs5" => fixtures::cs5(),
            other => return Err(GneflexError::new_err(format!("unknown fixture `{other}`"))),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let cfg = load_config(&path).map_err(err)?;
        let p = cfg.problem().map_err(err)?;
        Ok(Self {
            inner: Fixture {
                name: cfg.display_name().to_string(),
                instance: p.instance,
                graph: p.graph,
            },
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.instance.n_agents()
    }

    #[getter]
    fn n_lines(&self) -> usize {
        self.inner.instance.n_lines()
    }

    fn clearing_price(&self, beta: Vec<f64>) -> PyResult<f64> {
        market::clearing_price(&self.inner.instance, &beta).map_err(err)
    }

    fn load_adjustment(&self, beta: Vec<f64>) -> PyResult<Vec<f64>> {
        market::load_adjustment(&self.inner.instance, &beta).map_err(err)
    }

    #[pyo3(signature = (beta, tol=1e-9))]
    fn is_feasible(&self, beta: Vec<f64>, tol: f64) -> PyResult<bool> {
        let fs = build_feasible_set(&self.inner.instance);
        Ok(check_feasibility(&fs, &beta, tol).map_err(err)?.feasible())
    }

    /// Closest admissible bids.
    fn modify_bids(&self, beta: Vec<f64>) -> PyResult<Vec<f64>> {
        market::modify_bids(&build_feasible_set(&self.inner.instance), &beta).map_err(err)
    }

    fn objective(&self, n: usize, beta: Vec<f64>) -> PyResult<f64> {
        if n >= self.n_agents() {
            return Err(GneflexError::new_err(format!("agent index {n} out of range")));
        }
        self.game().objective(n, &beta).map_err(err)
    }

    fn pseudo_gradient(&self, beta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.game().pseudo_gradient(&beta).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(name={:?}, n_agents={}, n_lines={})",
            self.inner.name,
            self.n_agents(),
            self.n_lines()
        )
    }
}

/// Default `kappa`, cocoercivity constants and step sizes.
#[pyfunction]
fn tune<'py>(py: Python<'py>, problem: &PyProblem) -> PyResult<Bound<'py, PyAny>> {
    let inst = &problem.inner.instance;
    let g = &problem.inner.graph;
    let kappa = tuning::default_kappa(inst).map_err(err)?;
    let rep = tuning::cocoercivity_constants(inst, g, kappa).map_err(err)?;
    let gains = problem.gains().map_err(err)?;
    let margin = tuning::verify_gains(&gains, &build_feasible_set(inst), g).map_err(err)?;
    to_py(
        py,
        &json!({
            "cocoercivity": rep,
            "admissible_kappa_interval": tuning::admissible_kappa_interval(inst).map_err(err)?,
            "gains": gains,
            "phi_margin": margin,
        }),
    )
}

/// Run the distributed iteration from zero, or from a random start when
/// `seed` is given.
#[pyfunction]
#[pyo3(signature = (problem, tol=1e-8, max_iter=100_000, seed=None, record_stride=None))]
fn solve<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    tol: f64,
    max_iter: usize,
    seed: Option<u64>,
    record_stride: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let gains = problem.gains().map_err(err)?;
    let solver =
        DistributedSolver::new(problem.game(), problem.inner.graph.clone(), gains).map_err(err)?;
    let init = match seed {
        Some(seed) => InitialState::Random { seed, scale: 1.0 },
        None => InitialState::Zero,
    };
    let state = solver.init(&init).map_err(err)?;
    let out = py
        .detach(|| solver.run(state, &StopCriteria { tol, max_iter }, record_stride))
        .map_err(err)?;
    let res = solver.residuals(&out.state).map_err(err)?;
    let trajectory: Vec<Value> = out
        .trajectory
        .iter()
        .map(|r| {
            json!({
                "k": r.k,
                "beta": r.beta,
                "sigma": r.sigma,
                "lambda_mean": r.lambda_mean,
                "step": r.step,
                "kkt": r.kkt,
            })
        })
        .collect();
    to_py(
        py,
        &json!({
            "converged": out.converged(),
            "iterations": out.state.k,
            "last_step": out.last_step,
            "iterations_to_1e-3": out.iterations_to_1e3,
            "beta": out.state.beta(),
            "sigma": out.state.sigma(),
            "lambda_mean": out.state.mean_lambda(),
            "residuals": res,
            "trajectory": trajectory,
        }),
    )
}

/// Centralised equilibrium with its certificate.
#[pyfunction]
#[pyo3(signature = (problem, tol=1e-10))]
fn oracle<'py>(py: Python<'py>, problem: &PyProblem, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let gm = problem.game();
    let opts = OracleOptions {
        tol,
        ..Default::default()
    };
    let cert = py.detach(|| vgne::solve_vgne(&gm, &opts)).map_err(err)?;
    to_py(py, &json!(cert))
}

/// Largest violation of the equilibrium conditions at `(beta, gamma2)`.
#[pyfunction]
fn kkt_residual(problem: &PyProblem, beta: Vec<f64>, gamma2: Vec<f64>) -> PyResult<f64> {
    vgne::kkt_residual(&problem.game(), &beta, &gamma2).map_err(err)
}

/// Run a CLI command on a config file; returns `(exit_code, files, message)`.
#[pyfunction]
#[pyo3(signature = (command, config, out=None, seed=None, tol=None, max_iter=None, force=false))]
#[allow(clippy::too_many_arguments)]
fn run_command(
    py: Python<'_>,
    command: &str,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    force: bool,
) -> PyResult<(i32, Vec<String>, String)> {
    let opts = RunOptions {
        out,
        seed,
        tol,
        max_iter,
        force,
    };
    let rep = py
        .detach(|| runner::dispatch(command, &config, &opts))
        .map_err(err)?;
    let files = rep
        .files
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    Ok((rep.exit_code, files, rep.message))
}

#[pymodule]
fn gneflex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GneflexError", m.py().get_type::<GneflexError>())?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_residual, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}

//! Python bindings: parameters, kappa0 search, regime classification,
//! velocity estimation, simulation and the verification suites.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rwde::kappa::{self, KappaError, SearchOptions, Strategy};
use rwde::verify::{self, Suite, SuiteConfig};
use rwde::walk::{self, VelocityMethod};
use rwde::DirichletParams;

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Jump weights on `[-L, R]`.
#[pyclass(name = "Params", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: DirichletParams,
}

#[pymethods]
impl PyParams {
    /// Parses `"offset:weight,..."`, e.g. `"-1:1,1:2"`.
    #[new]
    fn new(alphas: &str) -> PyResult<Self> {
        Ok(PyParams {
            inner: alphas.parse().map_err(value_error)?,
        })
    }

    #[getter]
    fn left(&self) -> i64 {
        self.inner.left()
    }

    #[getter]
    fn right(&self) -> i64 {
        self.inner.right()
    }

    #[getter]
    fn weights(&self) -> Vec<(i64, f64)> {
        self.inner.weights()
    }

    #[getter]
    fn d_plus(&self) -> f64 {
        self.inner.derive().d_plus
    }

    #[getter]
    fn d_minus(&self) -> f64 {
        self.inner.derive().d_minus
    }

    #[getter]
    fn c_plus(&self) -> f64 {
        self.inner.derive().c_plus
    }

    #[getter]
    fn c_minus(&self) -> f64 {
        self.inner.derive().c_minus
    }

    #[getter]
    fn kappa1(&self) -> f64 {
        self.inner.derive().kappa1
    }

    #[getter]
    fn m0(&self) -> usize {
        self.inner.derive().m0
    }

    fn is_recurrent(&self) -> bool {
        self.inner.derive().is_recurrent()
    }

    fn reflect(&self) -> Self {
        PyParams {
            inner: self.inner.reflect(),
        }
    }

    /// Exit weight of a finite vertex set.
    fn beta(&self, set: Vec<i64>) -> PyResult<f64> {
        Ok(kappa::beta(&self.inner, &set).map_err(value_error)?.beta)
    }

    fn __repr__(&self) -> String {
        format!("Params(\"{}\")", self.inner)
    }
}

#[pyclass(name = "Kappa0", frozen, get_all)]
struct PyKappa0 {
    value: f64,
    witness: Vec<i64>,
    certified: bool,
    diameter_searched: i64,
    certified_bound: i64,
    nodes_explored: u64,
    timed_out: bool,
}

#[pymethods]
impl PyKappa0 {
    fn __repr__(&self) -> String {
        format!(
            "Kappa0(value={}, witness={:?}, certified={})",
            self.value, self.witness, self.certified
        )
    }
}

fn run_search(
    p: &DirichletParams,
    max_diameter: Option<i64>,
    strategy: &str,
) -> PyResult<(kappa::Kappa0Result, bool)> {
    let strategy: Strategy = strategy.parse().map_err(value_error)?;
    let d = max_diameter
        .unwrap_or_else(|| kappa::diameter_bound(p).min(2000).max(p.derive().m0 as i64));
    match kappa::kappa0_search(p, d, SearchOptions::with_strategy(strategy)) {
        Ok(r) => Ok((r, false)),
        Err(KappaError::Timeout { partial }) => Ok((*partial, true)),
        Err(e) => Err(value_error(e)),
    }
}

/// Minimal exit weight of a finite strongly connected set.
#[pyfunction]
#[pyo3(signature = (params, max_diameter = None, strategy = "branch_and_bound"))]
fn kappa0(
    py: Python<'_>,
    params: &PyParams,
    max_diameter: Option<i64>,
    strategy: &str,
) -> PyResult<PyKappa0> {
    let p = params.inner.clone();
    let (r, timed_out) = py.detach(|| run_search(&p, max_diameter, strategy))?;
    Ok(PyKappa0 {
        value: r.value,
        witness: r.witness.offsets,
        certified: r.certified,
        diameter_searched: r.diameter_searched,
        certified_bound: r.certified_bound,
        nodes_explored: r.nodes_explored,
        timed_out,
    })
}

/// `(regime, ballistic, kappa0, kappa1, certified)`.
#[pyfunction]
#[pyo3(signature = (params, max_diameter = None))]
fn classify(
    py: Python<'_>,
    params: &PyParams,
    max_diameter: Option<i64>,
) -> PyResult<(String, bool, f64, f64, bool)> {
    let p = params.inner.clone();
    let (k0, _) = py.detach(|| run_search(&p, max_diameter, "branch_and_bound"))?;
    let r = kappa::classify_regime(&p, &k0);
    Ok((
        r.tag.to_string(),
        r.ballistic,
        r.kappa0,
        r.kappa1,
        k0.certified,
    ))
}

#[pyclass(name = "Velocity", frozen, get_all)]
struct PyVelocity {
    v_hat: f64,
    std_error: f64,
    method: String,
    steps: usize,
    replicas: usize,
    warning: Option<String>,
}

#[pymethods]
impl PyVelocity {
    fn __repr__(&self) -> String {
        format!(
            "Velocity(v_hat={}, std_error={}, method={})",
            self.v_hat, self.std_error, self.method
        )
    }
}

/// Limiting velocity from independent walks in fresh environments.
#[pyfunction]
#[pyo3(signature = (params, steps = 100_000, replicas = 200, method = "endpoint", seed = 0))]
fn velocity(
    py: Python<'_>,
    params: &PyParams,
    steps: usize,
    replicas: usize,
    method: &str,
    seed: u64,
) -> PyResult<PyVelocity> {
    let method: VelocityMethod = method.parse().map_err(value_error)?;
    let p = params.inner.clone();
    let est = py.detach(|| walk::estimate_velocity(&p, steps, replicas, method, seed));
    Ok(PyVelocity {
        v_hat: est.v_hat,
        std_error: est.std_error,
        method: match est.method {
            VelocityMethod::Endpoint => "endpoint".into(),
            VelocityMethod::Regeneration => "regeneration".into(),
        },
        steps: est.steps,
        replicas: est.replicas,
        warning: est.warning,
    })
}

/// Positions of one walk from 0 in a fresh environment.
#[pyfunction]
#[pyo3(signature = (params, steps, seed = 0))]
fn simulate(py: Python<'_>, params: &PyParams, steps: usize, seed: u64) -> Vec<i64> {
    let p = params.inner.clone();
    py.detach(|| walk::simulate_lattice(&p, steps, seed, 0).positions)
}

/// Runs a verification suite; returns `(passed, evidence_json)`.
#[pyfunction]
#[pyo3(signature = (suite, replicas = None, window = None, seed = 0, params = None))]
fn verify_suite(
    py: Python<'_>,
    suite: &str,
    replicas: Option<usize>,
    window: Option<i64>,
    seed: u64,
    params: Option<&PyParams>,
) -> PyResult<(bool, String)> {
    let suite: Suite = suite.parse().map_err(value_error)?;
    let cfg = SuiteConfig {
        params: params.map(|p| p.inner.clone()),
        replicas,
        window,
        seed,
    };
    let report = py
        .detach(|| verify::run_suite(suite, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((report.passed, report.evidence.to_string()))
}

#[pymodule]
fn rwde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyKappa0>()?;
    m.add_class::<PyVelocity>()?;
    m.add_function(wrap_pyfunction!(kappa0, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(velocity, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    Ok(())
}

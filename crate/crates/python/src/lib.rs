//! Python bindings. Matrices cross the boundary as lists of rows (anything
//! that iterates like a list of float sequences is accepted, including 2-D
//! numpy arrays), with assets in rows and periods in columns.

use std::collections::BTreeMap;

use blockcov::estimator::{self, CovarianceEstimate, EstimatorConfig, Method};
use blockcov::evaluation::{self, StudyConfig};
use blockcov::factor::{self, FactorConfig, FactorFit, KPolicy};
use blockcov::panel::{ClassificationMap, ReturnPanel};
use blockcov::seed::rng_for;
use blockcov::simulation::{self, BlockStructure, PopulationModel, SimulationSpec, SizeScheme};
use blockcov::threshold::{ThresholdKind, ThresholdRule};
use blockcov::{Error, Matrix, Vector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::NotPositiveDefinite { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: &Rows) -> Result<Matrix, Error> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        return Err(Error::Data(format!("row {bad} has {} entries, expected {m}", rows[bad].len())));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_method(name: &str) -> PyResult<Method> {
    Method::ALL
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| PyValueError::new_err(format!("unknown method '{name}'")))
}

fn parse_kind(name: &str) -> PyResult<ThresholdKind> {
    match name.to_ascii_lowercase().as_str() {
        "hard" => Ok(ThresholdKind::Hard),
        "soft" => Ok(ThresholdKind::Soft),
        "al" => Ok(ThresholdKind::Al),
        "scad" => Ok(ThresholdKind::Scad),
        _ => Err(PyValueError::new_err(format!("unknown thresholding rule '{name}'"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &BTreeMap<String, serde_json::Value>) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Panel with generated asset names and the classification keyed by them.
fn panel_and_classes(returns: &Rows, classes: Option<Vec<String>>) -> Result<(ReturnPanel, Option<ClassificationMap>), Error> {
    let panel = ReturnPanel::from_matrix(to_matrix(returns)?)?;
    let classes = match classes {
        Some(codes) if codes.len() != panel.n_assets() => {
            return Err(Error::Data(format!("{} class codes for {} assets", codes.len(), panel.n_assets())))
        }
        Some(codes) => Some(panel.assets().iter().cloned().zip(codes).collect()),
        None => None,
    };
    Ok((panel, classes))
}

fn estimator_config(k: Option<usize>, seed: u64, config: Option<&str>) -> Result<EstimatorConfig, Error> {
    let mut cfg: EstimatorConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?,
        None => EstimatorConfig::default(),
    };
    if let Some(k) = k {
        cfg.factor.k_policy = KPolicy::Fixed { k };
    }
    cfg.seed = seed;
    Ok(cfg)
}

/// A covariance estimate: `sigma = common + psi`.
#[pyclass(name = "Estimate", frozen)]
struct PyEstimate {
    inner: CovarianceEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    #[getter]
    fn sigma(&self) -> Rows {
        to_rows(&self.inner.sigma)
    }

    #[getter]
    fn psi(&self) -> Rows {
        to_rows(&self.inner.psi)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    /// Cluster label per asset, or None for thresholding methods.
    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.assignment.as_ref().map(|a| a.labels().to_vec())
    }

    #[getter]
    fn hyperparameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.hyperparameters)
    }

    fn min_eigenvalue(&self) -> PyResult<f64> {
        self.inner.min_eigenvalue().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Estimate(method={}, p={}, k={})", self.inner.method, self.inner.sigma.nrows(), self.inner.k)
    }
}

/// Principal-component fit of the common component.
#[pyclass(name = "FactorFit", frozen)]
struct PyFactorFit {
    inner: FactorFit,
}

#[pymethods]
impl PyFactorFit {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.to_vec()
    }

    #[getter]
    fn shrunk_eigenvalues(&self) -> Vec<f64> {
        self.inner.shrunk_eigenvalues.clone()
    }

    #[getter]
    fn loadings(&self) -> Rows {
        to_rows(&self.inner.loadings)
    }

    #[getter]
    fn residuals(&self) -> Rows {
        to_rows(&self.inner.residuals)
    }

    #[getter]
    fn ortho_complement(&self) -> Rows {
        to_rows(&self.inner.ortho_complement)
    }

    fn common_component(&self) -> Rows {
        to_rows(&self.inner.common_component())
    }

    fn __repr__(&self) -> String {
        format!("FactorFit(p={}, k={})", self.inner.sample_cov.nrows(), self.inner.k)
    }
}

/// One simulated panel together with its population covariance.
#[pyclass(name = "SimulatedPanel", frozen, get_all)]
struct PySimulatedPanel {
    returns: Rows,
    sigma: Rows,
    common: Rows,
    psi: Rows,
    labels: Vec<usize>,
}

#[pyfunction]
#[pyo3(signature = (returns, method = "CSH", k = None, seed = 0, classes = None, config = None))]
fn estimate(
    py: Python<'_>,
    returns: Rows,
    method: &str,
    k: Option<usize>,
    seed: u64,
    classes: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<PyEstimate> {
    let method = parse_method(method)?;
    let cfg = estimator_config(k, seed, config).map_err(py_err)?;
    py.detach(|| {
        let (panel, classes) = panel_and_classes(&returns, classes)?;
        estimator::estimate(&panel, method, &cfg, classes.as_ref())
    })
    .map(|inner| PyEstimate { inner })
    .map_err(py_err)
}

/// Runs several methods on one factor fit; failed methods map to their
/// error message.
#[pyfunction]
#[pyo3(signature = (returns, methods = None, k = None, seed = 0, classes = None, config = None))]
fn compare<'py>(
    py: Python<'py>,
    returns: Rows,
    methods: Option<Vec<String>>,
    k: Option<usize>,
    seed: u64,
    classes: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<BTreeMap<&'static str, Bound<'py, PyAny>>> {
    let methods = match methods {
        Some(names) => names.iter().map(|n| parse_method(n)).collect::<PyResult<Vec<_>>>()?,
        None => vec![Method::Csh, Method::Csk, Method::Soft, Method::Al, Method::Scad],
    };
    let cfg = estimator_config(k, seed, config).map_err(py_err)?;
    let comparison = py
        .detach(|| {
            let (panel, classes) = panel_and_classes(&returns, classes)?;
            estimator::compare(&panel, &methods, &cfg, classes.as_ref())
        })
        .map_err(py_err)?;
    comparison
        .estimates
        .into_iter()
        .map(|(m, r)| {
            let value = match r {
                Ok(inner) => Bound::new(py, PyEstimate { inner })?.into_any(),
                Err(e) => e.to_string().into_pyobject(py)?.into_any(),
            };
            Ok((m.name(), value))
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (returns, k = None, eigen_shrinkage = true))]
fn fit_factors(py: Python<'_>, returns: Rows, k: Option<usize>, eigen_shrinkage: bool) -> PyResult<PyFactorFit> {
    let k_policy = match k {
        Some(k) => KPolicy::Fixed { k },
        None => KPolicy::BaiNg { max_k: None },
    };
    py.detach(|| {
        let panel = ReturnPanel::from_matrix(to_matrix(&returns)?)?;
        factor::fit_factors(&panel, &FactorConfig { k_policy, eigen_shrinkage })
    })
    .map(|inner| PyFactorFit { inner })
    .map_err(py_err)
}

/// Number of factors by the Bai-Ng IC1 criterion.
#[pyfunction]
#[pyo3(signature = (returns, max_k = None))]
fn estimate_num_factors(returns: Rows, max_k: Option<usize>) -> PyResult<usize> {
    let run = || {
        let panel = ReturnPanel::from_matrix(to_matrix(&returns)?)?;
        let max_k = max_k.unwrap_or_else(|| factor::default_max_k(panel.n_assets(), panel.n_periods()));
        factor::estimate_num_factors(&panel, max_k)
    };
    run().map(|c| c.k).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (p, t, k = 5, structure = "full", m = 10, connect_prob = 0.5, df = 5.0, seed = 0, rep = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    p: usize,
    t: usize,
    k: usize,
    structure: &str,
    m: usize,
    connect_prob: f64,
    df: f64,
    seed: u64,
    rep: usize,
) -> PyResult<PySimulatedPanel> {
    let structure = match structure {
        "full" => BlockStructure::Full { m, sizes: SizeScheme::default() },
        "partial" => BlockStructure::Partial { connect_prob },
        other => return Err(PyValueError::new_err(format!("structure must be 'full' or 'partial', got '{other}'"))),
    };
    let spec = SimulationSpec { p, t, k, structure, df, seed, reps: rep + 1, ..SimulationSpec::default() };
    let run = || {
        spec.validate()?;
        let model = PopulationModel::generate(&spec, rep)?;
        let panel = simulation::sample_panel(&model, t, df, &mut rng_for(seed, &[rep as u64, 4]))?;
        Ok::<_, Error>(PySimulatedPanel {
            returns: to_rows(panel.values()),
            sigma: to_rows(&model.sigma),
            common: to_rows(&model.common),
            psi: to_rows(&model.psi),
            labels: model.labels.labels().to_vec(),
        })
    };
    run().map_err(py_err)
}

/// Monte Carlo study from JSON specifications; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (spec, study = "{}"))]
fn run_simulation(py: Python<'_>, spec: &str, study: &str) -> PyResult<String> {
    let spec: SimulationSpec = serde_json::from_str(spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let study: StudyConfig = serde_json::from_str(study).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.detach(|| evaluation::run_simulation_study(&spec, &study)?.to_json()).map_err(py_err)
}

/// Generalized thresholding operator applied to one value.
#[pyfunction]
#[pyo3(signature = (kind, z, tau, a = None))]
fn threshold(kind: &str, z: f64, tau: f64, a: Option<f64>) -> PyResult<f64> {
    let kind = parse_kind(kind)?;
    let rule = ThresholdRule::new(kind, tau, a.unwrap_or_else(|| kind.default_shape())).map_err(py_err)?;
    Ok(rule.eval(z, tau))
}

#[pyfunction]
fn rand_index(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    evaluation::rand_index(&a, &b).map_err(py_err)
}

#[pyfunction]
fn paired_sign_test(n_plus: usize, n: usize) -> PyResult<f64> {
    evaluation::paired_sign_test(n_plus, n).map_err(py_err)
}

#[pyfunction]
fn gmv_weights(sigma: Rows) -> PyResult<Vec<f64>> {
    let w = to_matrix(&sigma).and_then(|s| evaluation::gmv_weights(&s)).map_err(py_err)?;
    Ok(w.iter().copied().collect())
}

#[pyfunction]
#[pyo3(signature = (weights, sigma, annualize = false))]
fn portfolio_risk(weights: Vec<f64>, sigma: Rows, annualize: bool) -> PyResult<f64> {
    let s = to_matrix(&sigma).map_err(py_err)?;
    evaluation::portfolio_risk(&Vector::from_vec(weights), &s, annualize).map_err(py_err)
}

/// Reads a wide returns CSV; returns `(assets, times, values)` with one row
/// of `values` per asset.
#[pyfunction]
fn load_returns(path: &str) -> PyResult<(Vec<String>, Vec<String>, Rows)> {
    let panel = blockcov::panel::load_returns(path).map_err(py_err)?;
    Ok((panel.assets().to_vec(), panel.times().to_vec(), to_rows(panel.values())))
}

#[pymodule]
fn pyblockcov(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("METHODS", Method::ALL.map(Method::name).to_vec())?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyFactorFit>()?;
    m.add_class::<PySimulatedPanel>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(fit_factors, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_num_factors, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(paired_sign_test, m)?)?;
    m.add_function(wrap_pyfunction!(gmv_weights, m)?)?;
    m.add_function(wrap_pyfunction!(portfolio_risk, m)?)?;
    m.add_function(wrap_pyfunction!(load_returns, m)?)?;
    Ok(())
}

//! Python bindings. Structured results (reports, spectra, sequences) are returned as plain
//! dicts and lists decoded from their JSON form.

use met_cli::config::ExperimentConfig;
use met_cli::runner;
use met_cli::scenarios;
use met_cli::selfcheck;
use met_core::cocycle::{self, BaseProcess, VolumeRoute};
use met_core::inequalities::{self, VerifyOptions};
use met_core::{consistent, volume, Exponent, Mode, VolumeOptions};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_json(py: Python<'_>, text: &str) -> PyResult<PyObject> {
    Ok(py
        .import_bound("json")?
        .call_method1("loads", (text,))?
        .unbind())
}

fn to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.downcast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    py.import_bound("json")?
        .call_method1("dumps", (obj,))?
        .extract()
}

fn serialize<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    from_json(py, &serde_json::to_string(v).map_err(err)?)
}

fn exponent(p: &Bound<'_, PyAny>) -> PyResult<Exponent> {
    if let Ok(x) = p.extract::<f64>() {
        return Exponent::new(x).map_err(err);
    }
    let s: String = p.extract()?;
    match s.as_str() {
        "inf" | "infinity" => Ok(Exponent::INF),
        _ => s
            .parse::<f64>()
            .map_err(err)
            .and_then(|x| Exponent::new(x).map_err(err)),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    volume::matrix_from_rows(&rows).map_err(err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn mode(name: &str) -> PyResult<Mode> {
    match name {
        "euclidean-exact" => Ok(Mode::EuclideanExact),
        "optimize" => Ok(Mode::Optimize),
        "net" => Ok(Mode::Net),
        _ => Err(PyValueError::new_err(format!("unknown mode {name:?}"))),
    }
}

/// `R^d` with the `l^p` norm; `p` is a number >= 1 or "inf".
#[pyclass(module = "met", frozen)]
#[derive(Clone)]
struct NormedSpace(met_core::NormedSpace);

#[pymethods]
impl NormedSpace {
    #[new]
    fn new(dim: usize, p: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(NormedSpace(
            met_core::NormedSpace::new(dim, exponent(p)?).map_err(err)?,
        ))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn p(&self) -> f64 {
        self.0.p().value()
    }

    fn norm(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = vector(x);
        self.0.check_vector(&x).map_err(err)?;
        Ok(self.0.norm(&x))
    }

    fn dual(&self) -> Self {
        NormedSpace(self.0.dual())
    }

    fn vol_k(&self, vectors: Vec<Vec<f64>>) -> PyResult<f64> {
        let vs: Vec<_> = vectors.into_iter().map(vector).collect();
        volume::vol_k(&self.0, &vs).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "NormedSpace(dim={}, p={})",
            self.0.dim(),
            self.0.p().value()
        )
    }
}

#[pyclass(module = "met", frozen)]
#[derive(Clone)]
struct Subspace(met_core::Subspace);

#[pymethods]
impl Subspace {
    /// Span of the given vectors.
    #[new]
    fn new(space: &NormedSpace, vectors: Vec<Vec<f64>>) -> PyResult<Self> {
        let vs: Vec<_> = vectors.into_iter().map(vector).collect();
        Ok(Subspace(
            met_core::Subspace::span(space.0, &vs).map_err(err)?,
        ))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Orthonormal basis vectors.
    fn basis(&self) -> Vec<Vec<f64>> {
        self.0
            .vectors()
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect()
    }

    fn annihilator(&self) -> Self {
        Subspace(self.0.annihilator())
    }

    fn grassmann_distance(&self, other: &Subspace) -> PyResult<f64> {
        self.0.grassmann_distance(&other.0).map_err(err)
    }

    fn contains(&self, x: Vec<f64>, tol: f64) -> bool {
        self.0.contains(&vector(x), tol)
    }
}

#[pyclass(module = "met", frozen)]
#[derive(Clone)]
struct LinearMap(met_core::LinearMap);

#[pymethods]
impl LinearMap {
    /// A square map on `space` given by row-major `matrix`.
    #[new]
    fn new(space: &NormedSpace, matrix_rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(LinearMap(
            met_core::LinearMap::on(space.0, matrix(matrix_rows)?).map_err(err)?,
        ))
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.0.matrix())
    }

    /// Enclosure `(lo, hi)` of the operator norm.
    fn op_norm(&self) -> (f64, f64) {
        self.0.op_norm()
    }

    fn dual(&self) -> PyResult<Self> {
        Ok(LinearMap(self.0.dual().map_err(err)?))
    }

    fn restrict(&self, v: &Subspace) -> PyResult<Self> {
        Ok(LinearMap(self.0.restrict(&v.0).map_err(err)?))
    }

    #[pyo3(signature = (k, mode = "optimize"))]
    fn d_k(&self, k: usize, mode: &str) -> PyResult<(f64, f64)> {
        let e =
            volume::d_k(&self.0, k, self::mode(mode)?, &VolumeOptions::default()).map_err(err)?;
        Ok((e.lo, e.hi))
    }

    #[pyo3(signature = (k, mode = "optimize"))]
    fn e_k(&self, k: usize, mode: &str) -> PyResult<(f64, f64)> {
        let e =
            volume::e_k(&self.0, k, self::mode(mode)?, &VolumeOptions::default()).map_err(err)?;
        Ok((e.lo, e.hi))
    }

    #[pyo3(signature = (k, mode = "optimize"))]
    fn f_k(&self, k: usize, mode: &str) -> PyResult<(f64, f64)> {
        let e =
            volume::f_k(&self.0, k, self::mode(mode)?, &VolumeOptions::default()).map_err(err)?;
        Ok((e.lo, e.hi))
    }

    /// Consistent vectors and functionals up to order `kmax`, with their certificate checks.
    fn consistent_sequence(&self, py: Python<'_>, kmax: usize) -> PyResult<(PyObject, PyObject)> {
        let seq = consistent::build(&self.0, kmax).map_err(err)?;
        let report = consistent::certify(&self.0, &seq);
        Ok((serialize(py, &seq)?, serialize(py, &report)?))
    }
}

#[pyclass(module = "met", frozen)]
#[derive(Clone)]
struct Generator(cocycle::Generator);

#[pymethods]
impl Generator {
    /// One map per symbol; `head_dim` declares a block-diagonal head/tail split.
    #[new]
    #[pyo3(signature = (space, matrices, head_dim = None))]
    fn new(
        space: &NormedSpace,
        matrices: Vec<Vec<Vec<f64>>>,
        head_dim: Option<usize>,
    ) -> PyResult<Self> {
        let ms = matrices
            .into_iter()
            .map(matrix)
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Generator(
            cocycle::Generator::with_split(space.0, ms, head_dim).map_err(err)?,
        ))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn alphabet_size(&self) -> usize {
        self.0.alphabet_size()
    }

    fn dual(&self) -> Self {
        Generator(self.0.dual())
    }

    /// Spectrum estimate; `base` is a dict such as
    /// `{"kind": "bernoulli", "probabilities": [0.5, 0.5], "seed": 1}`.
    #[pyo3(signature = (base, n_grid, kmax = None, n_samples = 1, route = "auto"))]
    fn spectrum(
        &self,
        py: Python<'_>,
        base: &Bound<'_, PyAny>,
        n_grid: Vec<usize>,
        kmax: Option<usize>,
        n_samples: usize,
        route: &str,
    ) -> PyResult<PyObject> {
        let base: BaseProcess = serde_json::from_str(&to_json(py, base)?).map_err(err)?;
        let route: VolumeRoute =
            serde_json::from_value(serde_json::Value::String(route.into())).map_err(err)?;
        let opts = cocycle::SpectrumOptions {
            route,
            ..Default::default()
        };
        let kmax = kmax.unwrap_or(self.0.dim());
        let r = py
            .allow_threads(|| {
                cocycle::estimate_spectrum_with(&self.0, &base, kmax, &n_grid, n_samples, &opts)
            })
            .map_err(err)?;
        serialize(py, &r)
    }

    /// `(value, standard error)` of the top exponent of the tail block.
    #[pyo3(signature = (base, n_grid, n_samples = 1))]
    fn kappa_upper(
        &self,
        py: Python<'_>,
        base: &Bound<'_, PyAny>,
        n_grid: Vec<usize>,
        n_samples: usize,
    ) -> PyResult<(f64, f64)> {
        let base: BaseProcess = serde_json::from_str(&to_json(py, base)?).map_err(err)?;
        py.allow_threads(|| cocycle::kappa_upper_report(&self.0, &base, &n_grid, n_samples))
            .map_err(err)
    }
}

/// Checks the volume inequalities for `t`, `s` and the restriction of `t` to `v`.
#[pyfunction]
#[pyo3(signature = (t, s, v, kmax, rel_slack = 1e-9))]
fn verify_volume_inequalities(
    py: Python<'_>,
    t: &LinearMap,
    s: &LinearMap,
    v: &Subspace,
    kmax: usize,
    rel_slack: f64,
) -> PyResult<PyObject> {
    let opts = VerifyOptions {
        rel_slack,
        ..VerifyOptions::default()
    };
    let r = inequalities::verify_volume_inequalities(&t.0, &s.0, &v.0, kmax, &opts).map_err(err)?;
    serialize(py, &r)
}

/// Runs an experiment config (a dict or JSON text) and returns the report.
#[pyfunction]
fn run_config(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<PyObject> {
    let cfg = ExperimentConfig::from_json(&to_json(py, config)?).map_err(err)?;
    let report = py
        .allow_threads(|| runner::run(&cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    from_json(py, &report.to_json())
}

/// The config of a built-in scenario, as a dict.
#[pyfunction]
fn scenario_config(py: Python<'_>, name: &str) -> PyResult<PyObject> {
    let s = scenarios::find(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))?;
    from_json(py, &s.config().to_json())
}

#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, &'static str, &'static str)> {
    scenarios::scenarios()
        .iter()
        .map(|s| (s.name, s.oracle, s.description))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (seed = 0, ops = selfcheck::DEFAULT_OPS))]
fn run_selfcheck(py: Python<'_>, seed: u64, ops: usize) -> PyResult<PyObject> {
    let r = py.allow_threads(|| selfcheck::selfcheck(seed, ops, 1e-9));
    from_json(py, &r.to_json())
}

#[pymodule]
fn met(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<NormedSpace>()?;
    m.add_class::<Subspace>()?;
    m.add_class::<LinearMap>()?;
    m.add_class::<Generator>()?;
    m.add_function(wrap_pyfunction!(verify_volume_inequalities, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_config, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_selfcheck, m)?)?;
    Ok(())
}

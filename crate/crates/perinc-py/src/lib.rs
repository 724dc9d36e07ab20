//! Python bindings for the prediction library: density models, increment
//! coefficients, and the spectral/oracle solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use perinc_core::harmonic::CoefficientSequence;
use perinc_core::oracle::{covariances, normal_equations_mse};
use perinc_core::predictor::{predict_finite as core_predict_finite, predict_seq};
use perinc_core::spectral::{
    eval_density, kernel_eval as core_kernel_eval, DensityModel as CoreModel, KernelDirection,
    LambdaGrid, SpectralDensityGrid,
};
use perinc_core::{C64, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Validation(_) | Error::Infeasible(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: &[Vec<Complex64>], what: &str) -> PyResult<DMatrix<C64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err(format!("{what}: expected a square matrix")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

fn to_sequence(vectors: &[Vec<Complex64>]) -> PyResult<CoefficientSequence> {
    let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
    if dim == 0 {
        return Err(PyValueError::new_err("target weights must be non-empty"));
    }
    let vs = vectors
        .iter()
        .map(|row| {
            if row.len() != dim {
                Err(PyValueError::new_err("target weight rows must share their length"))
            } else {
                Ok(DVector::from_iterator(dim, row.iter().copied()))
            }
        })
        .collect::<PyResult<Vec<_>>>()?;
    CoefficientSequence::new(dim, vs).map_err(to_py_err)
}

/// Increment specification: order `d`, step `tau` (in periods), and the
/// period length.
#[pyclass(frozen, module = "perinc")]
#[derive(Clone)]
struct IncrementSpec {
    inner: perinc_core::increments::IncrementSpec,
}

#[pymethods]
impl IncrementSpec {
    #[new]
    fn new(d: usize, tau: usize, period: f64) -> PyResult<Self> {
        Ok(Self {
            inner: perinc_core::increments::IncrementSpec::new(d, tau, period)
                .map_err(to_py_err)?,
        })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn tau(&self) -> usize {
        self.inner.tau
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    fn __repr__(&self) -> String {
        format!(
            "IncrementSpec(d={}, tau={}, period={})",
            self.inner.d, self.inner.tau, self.inner.period
        )
    }
}

/// Parametric spectral density family, evaluated on demand.
#[pyclass(frozen, module = "perinc")]
#[derive(Clone)]
struct DensityModel {
    inner: CoreModel,
}

#[pymethods]
impl DensityModel {
    /// `F = Phi Phi^*` with `Phi(z) = sum_k coeffs[k] z^k`; each coefficient
    /// is a square complex matrix given as nested lists.
    #[staticmethod]
    fn moving_average(coeffs: Vec<Vec<Vec<Complex64>>>) -> PyResult<Self> {
        if coeffs.is_empty() {
            return Err(PyValueError::new_err("moving_average: empty coefficient list"));
        }
        let mats = coeffs
            .iter()
            .map(|c| to_matrix(c, "moving_average coefficient"))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: CoreModel::MovingAverage(mats) })
    }

    /// Independent per-harmonic AR(1) spectra.
    #[staticmethod]
    fn diagonal_ar1(rho: Vec<f64>, sigma: Vec<f64>) -> Self {
        Self { inner: CoreModel::DiagonalAr1 { rho, sigma } }
    }

    /// Constant `level * I`.
    #[staticmethod]
    fn white(dim: usize, level: f64) -> PyResult<Self> {
        if level < 0.0 {
            return Err(PyValueError::new_err("white: level must be non-negative"));
        }
        let phi = DMatrix::from_diagonal_element(dim, dim, C64::new(level.sqrt(), 0.0));
        Ok(Self { inner: CoreModel::MovingAverage(vec![phi]) })
    }

    /// Identically zero density.
    #[staticmethod]
    fn zero(dim: usize) -> Self {
        Self { inner: CoreModel::MovingAverage(vec![DMatrix::zeros(dim, dim)]) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

fn eval_on_grid(model: &DensityModel, m: usize) -> PyResult<SpectralDensityGrid> {
    let grid = LambdaGrid::new(m).map_err(to_py_err)?;
    eval_density(&model.inner, &grid).map_err(to_py_err)
}

/// Lifted increment composition weights `d(k)` for `k = 0..count`.
#[pyfunction]
fn composition_coeffs(d: usize, count: usize) -> PyResult<Vec<u128>> {
    perinc_core::increments::composition_coeffs(d, count).map_err(to_py_err)
}

/// Strided composition weights `d_tau(k)` for `k = 0..count`.
#[pyfunction]
fn strided_coeffs(d: usize, tau: usize, count: usize) -> PyResult<Vec<u128>> {
    perinc_core::increments::strided_coeffs(d, tau, count).map_err(to_py_err)
}

/// Increment kernel on the frequency grid; `direction` is `"forward"` or
/// `"inverse"`.
#[pyfunction]
fn kernel_eval(spec: &IncrementSpec, m: usize, direction: &str) -> PyResult<Vec<f64>> {
    let dir = match direction {
        "forward" => KernelDirection::Forward,
        "inverse" => KernelDirection::Inverse,
        other => {
            return Err(PyValueError::new_err(format!(
                "direction must be 'forward' or 'inverse', got '{other}'"
            )))
        }
    };
    let grid = LambdaGrid::new(m).map_err(to_py_err)?;
    core_kernel_eval(&spec.inner, &grid, dir).map_err(to_py_err)
}

fn result_dict(py: Python<'_>, res: &perinc_core::predictor::PredictionResult) -> PyResult<PyObject> {
    let out = PyDict::new(py);
    out.set_item("mse", res.mse)?;
    out.set_item("mse_integral", res.mse_integral)?;
    out.set_item("condition", res.diagnostics.condition)?;
    out.set_item("truncation_tail", res.diagnostics.truncation_tail)?;
    out.set_item("minimality_flagged", res.diagnostics.minimality_flagged)?;
    Ok(out.into())
}

/// Mean-square optimal prediction of `sum_j a_j^T z_j` from the observed
/// past; `a` is a list of per-lag coefficient vectors.
#[pyfunction]
fn predict(
    py: Python<'_>,
    f: &DensityModel,
    g: &DensityModel,
    a: Vec<Vec<Complex64>>,
    spec: &IncrementSpec,
    m: usize,
    l: usize,
) -> PyResult<PyObject> {
    let fg = eval_on_grid(f, m)?;
    let gg = eval_on_grid(g, m)?;
    let a_seq = to_sequence(&a)?;
    let res = predict_seq(&fg, &gg, &a_seq, &spec.inner, l).map_err(to_py_err)?;
    result_dict(py, &res)
}

/// Finite-horizon variant: the target support and the estimator both live on
/// the first `n + 1` periods.
#[pyfunction]
fn predict_finite(
    py: Python<'_>,
    f: &DensityModel,
    g: &DensityModel,
    a: Vec<Vec<Complex64>>,
    spec: &IncrementSpec,
    m: usize,
    n: usize,
    l: usize,
) -> PyResult<PyObject> {
    let fg = eval_on_grid(f, m)?;
    let gg = eval_on_grid(g, m)?;
    let a_seq = to_sequence(&a)?;
    let res = core_predict_finite(&fg, &gg, &a_seq, &spec.inner, n, l).map_err(to_py_err)?;
    result_dict(py, &res)
}

/// Factorized-route solve; the noise is given by its moving-average
/// coefficients so its autocovariances are exact.
#[pyfunction]
fn predict_factorized(
    py: Python<'_>,
    f: &DensityModel,
    g_ma: Vec<Vec<Vec<Complex64>>>,
    a: Vec<Vec<Complex64>>,
    spec: &IncrementSpec,
    m: usize,
    l: usize,
    q_max: usize,
) -> PyResult<PyObject> {
    let fg = eval_on_grid(f, m)?;
    let mats = g_ma
        .iter()
        .map(|c| to_matrix(c, "noise coefficient"))
        .collect::<PyResult<Vec<_>>>()?;
    let gg = eval_density(&CoreModel::MovingAverage(mats.clone()), &fg.grid).map_err(to_py_err)?;
    let a_seq = to_sequence(&a)?;
    let res = perinc_core::factorization::predict_factorized(
        &fg,
        &gg,
        &mats,
        &a_seq,
        &spec.inner,
        l,
        q_max,
    )
    .map_err(to_py_err)?;
    result_dict(py, &res)
}

/// Independent covariance-domain reference solution (Gram normal equations
/// over `lp` observed lags); returns the oracle mse and the target variance.
#[pyfunction]
fn oracle_mse(
    py: Python<'_>,
    f: &DensityModel,
    g: &DensityModel,
    a: Vec<Vec<Complex64>>,
    spec: &IncrementSpec,
    m: usize,
    l: usize,
    lp: usize,
) -> PyResult<PyObject> {
    let fg = eval_on_grid(f, m)?;
    let gg = eval_on_grid(g, m)?;
    let a_seq = to_sequence(&a)?;
    let res = predict_seq(&fg, &gg, &a_seq, &spec.inner, l).map_err(to_py_err)?;
    let cov = covariances(&fg, &gg, &spec.inner, lp + l + 3).map_err(to_py_err)?;
    let oracle = normal_equations_mse(&res.a, &res.b, &cov, lp).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("mse", oracle.mse)?;
    out.set_item("var_h", oracle.var_h)?;
    out.set_item("spectral_mse", res.mse)?;
    Ok(out.into())
}

#[pymodule]
fn perinc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<IncrementSpec>()?;
    m.add_class::<DensityModel>()?;
    m.add_function(wrap_pyfunction!(composition_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(strided_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_eval, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(predict_finite, m)?)?;
    m.add_function(wrap_pyfunction!(predict_factorized, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_mse, m)?)?;
    Ok(())
}

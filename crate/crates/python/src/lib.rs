//! Python module `medtest`: the mediation test on in-memory arrays and the
//! Monte Carlo driver on TOML plans.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use medtest_core::data::{Dataset, ModelConfig};
use medtest_core::mediation::{run, TestResult};
use medtest_core::simulation::{run_monte_carlo_methods, SimulationPlan, Table, TableFormat};
use medtest_core::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Row-major nested values to a matrix.
fn from_rows(name: &str, rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
    let width = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(format!("{name}: row {} has {} entries, expected {width}", i + 1, r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// Accepts a 2-d sequence, or a 1-d sequence read as a single column.
fn matrix_arg(name: &str, obj: &Bound<'_, PyAny>) -> PyResult<DMatrix<f64>> {
    if let Ok(rows) = obj.extract::<Vec<Vec<f64>>>() {
        return from_rows(name, rows).map_err(PyValueError::new_err);
    }
    match obj.extract::<Vec<f64>>() {
        Ok(col) => Ok(DMatrix::from_column_slice(col.len(), 1, &col)),
        Err(_) => Err(PyValueError::new_err(format!(
            "{name} must be a 1-d or 2-d sequence of numbers"
        ))),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn result_dict<'py>(py: Python<'py>, res: &TestResult, config: &ModelConfig) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("method", config.method.label())?;
    out.set_item("alpha", config.alpha)?;
    out.set_item("tau", config.tau)?;
    out.set_item("gamma_hat", res.estimate.gamma_hat.as_slice().to_vec())?;
    out.set_item("gamma_pilot", res.estimate.gamma_pilot.as_slice().to_vec())?;
    out.set_item("v_hat", rows(&res.variance.v_hat))?;
    out.set_item("t_stats", res.outcome.t_stats.as_slice().to_vec())?;
    out.set_item("statistic", res.outcome.statistic)?;
    out.set_item("threshold", res.outcome.threshold)?;
    out.set_item("p_value", res.outcome.p_value)?;
    out.set_item("reject", res.outcome.reject)?;

    let d = &res.diagnostics;
    let diag = PyDict::new(py);
    diag.set_item("s_hat_m", d.s_hat_m)?;
    diag.set_item("s_hat_a", d.s_hat_a)?;
    diag.set_item("sigma2", d.sigma2)?;
    diag.set_item("sigma_e2", d.sigma_e2)?;
    diag.set_item("sigma_z2", d.sigma_z2)?;
    diag.set_item("lambdas_used", d.lambdas_used.clone())?;
    diag.set_item("mu_used", d.mu_used)?;
    diag.set_item("lasso_lambda0", d.lasso_lambda0)?;
    diag.set_item("scaled_lasso_degenerate", d.scaled_lasso_degenerate)?;
    diag.set_item("support", d.support.clone())?;
    diag.set_item("warnings", d.warnings.clone())?;
    out.set_item("diagnostics", diag)?;
    Ok(out)
}

/// Debiased test of `H0: gamma = 0`. `y` is 1-d; `a`, `m` and `c` are
/// n-row arrays (1-d means one column). Returns a dict.
#[pyfunction]
#[pyo3(signature = (
    y, a, m, c = None, *, alpha = 0.05, tau = 1.0, method = "bonf", variant = "full",
    lambda_scale = 1.0, lambda_search = "refine", mu_scale = 1.0, lasso_scale = 1.0
))]
#[allow(clippy::too_many_arguments)]
fn test<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    a: &Bound<'py, PyAny>,
    m: &Bound<'py, PyAny>,
    c: Option<&Bound<'py, PyAny>>,
    alpha: f64,
    tau: f64,
    method: &str,
    variant: &str,
    lambda_scale: f64,
    lambda_search: &str,
    mu_scale: f64,
    lasso_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = ModelConfig {
        alpha,
        tau,
        method: method.parse().map_err(py_err)?,
        variant: variant.parse().map_err(py_err)?,
        lambda_scale,
        lambda_search: lambda_search.parse().map_err(py_err)?,
        mu_scale,
        lasso_scale,
        seed: None,
    };
    config.validate().map_err(py_err)?;
    let a = matrix_arg("a", a)?;
    let m = matrix_arg("m", m)?;
    let c = c.map(|c| matrix_arg("c", c)).transpose()?;
    let dataset = Dataset::new(DVector::from_vec(y), a, m, c).map_err(py_err)?;
    let res = py.detach(|| run(&dataset, &config)).map_err(py_err)?;
    result_dict(py, &res, &config)
}

/// Runs a TOML scenario plan and returns the result table as CSV (or
/// aligned text with `format="text"`).
#[pyfunction]
#[pyo3(signature = (config, *, reps = None, seed = None, threads = None, format = "csv"))]
fn simulate(
    py: Python<'_>,
    config: &str,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    format: &str,
) -> PyResult<String> {
    let format: TableFormat = format.parse().map_err(py_err)?;
    let plan = SimulationPlan::from_toml(config).map_err(py_err)?;
    let reps = reps.or(plan.reps).unwrap_or(500);
    if reps == 0 {
        return Err(PyValueError::new_err("reps must be at least 1"));
    }
    if threads == Some(0) {
        return Err(PyValueError::new_err("threads must be at least 1"));
    }
    let seed = seed.or(plan.seed).unwrap_or(0);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.detach(|| {
        let mut results = Vec::new();
        for scenario in &plan.scenarios {
            results.extend(pool.install(|| {
                run_monte_carlo_methods(scenario, &plan.methods, reps, seed, &plan.config)
            })?);
        }
        Ok(Table::from_results(&results).render(format))
    })
    .map_err(py_err)
}

/// Adds the module contents to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(test, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[pymodule]
fn medtest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

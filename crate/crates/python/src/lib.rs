//! Python bindings. Vectors cross the boundary as lists of floats and matrices
//! as lists of rows.

use std::path::PathBuf;

use bregaccel::cli::{run_solver, SolverKind};
use bregaccel::io::{read_problem_file, write_problem_file, ProblemFile};
use bregaccel::synth::{generate, SynthConfig};
use bregaccel::{AdmmConfig, ConstrainedL1Problem, Error, FistaConfig, Safeguard, SolveReport, SolverConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols_if_empty: usize, name: &str) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{name}: rows have different lengths")));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `min uᵀCu + τ1‖u‖₁ + τ2‖Du‖₁  s.t.  Au = b`.
#[pyclass(name = "Problem", module = "pybregaccel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: ConstrainedL1Problem,
}

#[pymethods]
impl PyProblem {
    /// `d` and `a` may be empty lists (no fused term, no constraints).
    #[new]
    #[pyo3(signature = (c, a, b, tau1, tau2, d=None))]
    fn new(
        c: Vec<Vec<f64>>,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        tau1: f64,
        tau2: f64,
        d: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let c = matrix(c, 0, "c")?;
        let n = c.ncols();
        let a = matrix(a, n, "a")?;
        let d = matrix(d.unwrap_or_default(), n, "d")?;
        let inner = ConstrainedL1Problem::new(c, tau1, tau2, d, a, DVector::from_vec(b)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = read_problem_file(&path).and_then(|f| f.to_problem()).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_problem_file(&path, &ProblemFile::new(&self.inner, None)).map_err(to_py)
    }

    /// Number of variables.
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// Rows of `D`.
    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    /// Rows of `A`.
    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn tau1(&self) -> f64 {
        self.inner.tau1()
    }

    #[getter]
    fn tau2(&self) -> f64 {
        self.inner.tau2()
    }

    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.c())
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.a())
    }

    #[getter]
    fn b(&self) -> Vec<f64> {
        self.inner.b().as_slice().to_vec()
    }

    #[getter]
    fn d(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.d())
    }

    fn objective(&self, u: Vec<f64>) -> PyResult<f64> {
        if u.len() != self.inner.n() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", self.inner.n(), u.len())));
        }
        Ok(self.inner.objective(&DVector::from_vec(u)))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n={}, q={}, m={}, tau1={}, tau2={})",
            self.inner.n(),
            self.inner.q(),
            self.inner.m(),
            self.inner.tau1(),
            self.inner.tau2()
        )
    }
}

#[pyclass(name = "SolveReport", module = "pybregaccel", frozen)]
struct PyReport {
    inner: SolveReport,
    n: usize,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn solver(&self) -> &str {
        &self.inner.solver
    }

    /// Stacked iterate `[u; d]`.
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x_final.clone()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.x_final[..self.n].to_vec()
    }

    #[getter]
    fn multiplier(&self) -> Vec<f64> {
        self.inner.multiplier.clone()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective
    }

    #[getter]
    fn outer_iters(&self) -> usize {
        self.inner.outer_iters
    }

    #[getter]
    fn accel_steps_taken(&self) -> usize {
        self.inner.accel_steps_taken
    }

    #[getter]
    fn accel_steps_rejected(&self) -> usize {
        self.inner.accel_steps_rejected
    }

    #[getter]
    fn fista_iters(&self) -> usize {
        self.inner.inner.fista
    }

    #[getter]
    fn cg_iters(&self) -> usize {
        self.inner.inner.cg
    }

    /// `"converged"`, `"max_outer"` or `"numerical_error"`.
    #[getter]
    fn termination(&self) -> &'static str {
        self.inner.termination.name()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.termination == bregaccel::Termination::Converged
    }

    #[getter]
    fn violation_a(&self) -> f64 {
        self.inner.violation_a
    }

    #[getter]
    fn violation_d(&self) -> f64 {
        self.inner.violation_d
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.inner.wall_time
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("report serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveReport(solver={:?}, termination={}, outer_iters={}, objective={:e})",
            self.inner.solver,
            self.inner.termination.name(),
            self.inner.outer_iters,
            self.inner.objective
        )
    }
}

/// Runs one solver: `"sbsa"`, `"sbsa-lsa"`, `"sb"` or `"admm"`.
#[pyfunction]
#[pyo3(signature = (
    problem,
    solver="sbsa",
    *,
    tol_b=1e-4,
    max_outer=None,
    lam=1.0,
    tol_f=1e-5,
    fista_max_iters=5000,
    tol_cg=1e-2,
    warmstart_iters=5,
    strict_safeguard=false,
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    solver: &str,
    tol_b: f64,
    max_outer: Option<usize>,
    lam: f64,
    tol_f: f64,
    fista_max_iters: usize,
    tol_cg: f64,
    warmstart_iters: usize,
    strict_safeguard: bool,
) -> PyResult<PyReport> {
    let kind: SolverKind = solver.parse().map_err(PyValueError::new_err)?;
    let defaults = SolverConfig::default();
    let cfg = SolverConfig {
        lambda: lam,
        tol_b,
        max_outer: max_outer.unwrap_or(defaults.max_outer),
        warmstart_iters,
        fista: FistaConfig {
            tol_f,
            max_iters: fista_max_iters,
        },
        tol_cg,
        safeguard: if strict_safeguard {
            Safeguard::StrictReject
        } else {
            Safeguard::HeuristicAccept
        },
        ..defaults
    };
    let mut admm = AdmmConfig::from_solver(&cfg);
    if let Some(cap) = max_outer {
        admm.max_iters = cap;
    }
    let problem = problem.inner.clone();
    let n = problem.n();
    let report = py
        .detach(move || {
            let sp = bregaccel::stack(&problem)?;
            run_solver(kind, &sp, &cfg, &admm)
        })
        .map_err(to_py)?;
    Ok(PyReport { inner: report, n })
}

/// Exact optimum of a small instance by sign-pattern enumeration.
/// Returns `(u, objective)`.
#[pyfunction]
fn enumerate_solve(py: Python<'_>, problem: &PyProblem) -> PyResult<(Vec<f64>, f64)> {
    let problem = problem.inner.clone();
    let sol = py.detach(move || bregaccel::enumerate_solve(&problem)).map_err(to_py)?;
    Ok((sol.u.as_slice().to_vec(), sol.objective))
}

#[pyfunction]
fn soft_threshold(v: f64, t: f64) -> f64 {
    bregaccel::soft_threshold(v, t)
}

/// Seeded random portfolio instance. Returns `(problem, naive_holdings)`.
#[pyfunction]
#[pyo3(signature = (seed=0, n_assets=4, periods=3, tau1=1e-2, tau2=1e-2))]
fn synth(seed: u64, n_assets: usize, periods: usize, tau1: f64, tau2: f64) -> PyResult<(PyProblem, Vec<f64>)> {
    let inst = generate(&SynthConfig {
        seed,
        n_assets,
        periods,
        tau1,
        tau2,
        ..SynthConfig::default()
    })
    .map_err(to_py)?;
    Ok((
        PyProblem {
            inner: inst.model.problem,
        },
        inst.naive.u.as_slice().to_vec(),
    ))
}

/// Final wealth of the equal-weight strategy and its holdings.
#[pyfunction]
#[pyo3(signature = (returns, xi_ini=1.0))]
fn naive_wealth(returns: Vec<Vec<f64>>, xi_ini: f64) -> PyResult<(f64, Vec<f64>)> {
    let n_a = returns.first().map_or(0, Vec::len);
    if n_a == 0 || returns.iter().any(|r| r.len() != n_a) {
        return Err(PyValueError::new_err("returns must be a non-empty list of equal-length rows"));
    }
    let r: Vec<DVector<f64>> = returns.into_iter().map(DVector::from_vec).collect();
    let naive = bregaccel::naive_wealth(&r, n_a, xi_ini);
    Ok((naive.xi_naive, naive.u.as_slice().to_vec()))
}

#[pymodule]
pub fn pybregaccel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_solve, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(naive_wealth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

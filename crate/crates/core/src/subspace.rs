//! Orthant-face subspace acceleration.
//!
//! Zero and nonzero coordinates of an iterate play the role of active and free
//! variables. The optimality measures `β` (zero coordinates) and `φ` (nonzero
//! coordinates) decide whether a step restricted to the current orthant face is
//! worth taking; the restricted problem is a smooth quadratic solved by CG and
//! the result is brought back into the face by a projected backtracking search.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::all_finite;
use crate::model::{StackedProblem, SubproblemState};

/// Sign-based split of the coordinates of an iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSetPartition {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub zero: Vec<usize>,
}

impl ActiveSetPartition {
    /// `A₊ ∪ A₋` in increasing order.
    pub fn nonzero(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.plus.iter().chain(self.minus.iter()).copied().collect();
        out.sort_unstable();
        out
    }

    pub fn len(&self) -> usize {
        self.plus.len() + self.minus.len() + self.zero.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact sign partition; zero means exactly `0.0`.
pub fn partition(x: &DVector<f64>) -> ActiveSetPartition {
    let mut part = ActiveSetPartition {
        plus: Vec::new(),
        minus: Vec::new(),
        zero: Vec::new(),
    };
    for (i, &v) in x.iter().enumerate() {
        if v > 0.0 {
            part.plus.push(i);
        } else if v < 0.0 {
            part.minus.push(i);
        } else {
            part.zero.push(i);
        }
    }
    part
}

/// Min-norm subgradient `g^k(x)` of `H^k` given `∇G^k(x)`.
pub fn min_norm_subgradient(grad: &DVector<f64>, delta: &DVector<f64>, part: &ActiveSetPartition) -> DVector<f64> {
    let mut g = DVector::zeros(grad.len());
    for &i in &part.plus {
        g[i] = grad[i] + delta[i];
    }
    for &i in &part.minus {
        g[i] = grad[i] - delta[i];
    }
    for &i in &part.zero {
        g[i] = zero_coordinate_violation(grad[i], delta[i]);
    }
    g
}

#[inline]
fn zero_coordinate_violation(grad: f64, delta: f64) -> f64 {
    if grad + delta < 0.0 {
        grad + delta
    } else if grad - delta > 0.0 {
        grad - delta
    } else {
        0.0
    }
}

/// Min-norm subgradient split by zero (`beta`) and nonzero (`phi`) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityMeasures {
    pub g: DVector<f64>,
    pub beta: DVector<f64>,
    pub phi: DVector<f64>,
}

impl OptimalityMeasures {
    pub fn is_stationary(&self) -> bool {
        self.beta.iter().all(|&b| b == 0.0) && self.phi.iter().all(|&p| p == 0.0)
    }
}

pub fn compute_beta_phi(grad: &DVector<f64>, delta: &DVector<f64>, x: &DVector<f64>) -> Result<OptimalityMeasures> {
    check_len("gradient", "x", x.len(), grad.len())?;
    check_len("delta", "x", x.len(), delta.len())?;
    let n = x.len();
    let mut beta = DVector::zeros(n);
    let mut phi = DVector::zeros(n);
    for i in 0..n {
        let (gi, di, xi) = (grad[i], delta[i], x[i]);
        if xi == 0.0 {
            beta[i] = zero_coordinate_violation(gi, di);
        } else if xi > 0.0 {
            // φ also measures how far x_i can move before leaving the orthant
            phi[i] = (gi + di).min(xi.max(gi - di));
        } else {
            phi[i] = (gi - di).max(xi.min(gi + di));
        }
    }
    let g = min_norm_subgradient(grad, delta, &partition(x));
    Ok(OptimalityMeasures { g, beta, phi })
}

/// Which subproblem solver the driver should use at this iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Accelerate,
    Standard,
}

/// Adaptive weight of the switching criterion `‖β‖ ≤ γ‖φ‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaState {
    pub gamma: f64,
    pub decrease: f64,
    pub increase: f64,
}

impl GammaState {
    pub fn new(gamma0: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma0}")));
        }
        Ok(Self {
            gamma: gamma0,
            decrease: 0.9,
            increase: 1.1,
        })
    }
}

impl Default for GammaState {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            decrease: 0.9,
            increase: 1.1,
        }
    }
}

/// Accelerate iff `‖β‖ ≤ γ‖φ‖`; γ shrinks after an acceleration decision and
/// grows otherwise.
pub fn switching_test(meas: &OptimalityMeasures, gs: &mut GammaState) -> Branch {
    if meas.beta.norm() <= gs.gamma * meas.phi.norm() {
        gs.gamma *= gs.decrease;
        Branch::Accelerate
    } else {
        gs.gamma *= gs.increase;
        Branch::Standard
    }
}

/// A symmetric positive definite linear operator.
pub trait SpdOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl SpdOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }
}

/// `H^k` restricted to the affine hull of the orthant face of `x`:
///
/// ```text
/// w ↦ F(E w) + (λ/2)‖M E w − s^k‖² + ⟨ν, w⟩
/// ```
///
/// where `E` embeds the free (nonzero) coordinates and `ν_i = δ_i sign(x_i)`.
/// The Hessian `P(∇²F + λMᵀM)Pᵀ` is applied matrix-free.
#[derive(Debug, Clone)]
pub struct ReducedQuadratic<'a> {
    sp: &'a StackedProblem,
    state: &'a SubproblemState,
    free: Vec<usize>,
    nu: DVector<f64>,
}

pub fn restricted_problem<'a>(
    sp: &'a StackedProblem,
    state: &'a SubproblemState,
    part: &ActiveSetPartition,
    x: &DVector<f64>,
) -> Result<ReducedQuadratic<'a>> {
    check_len("x", "stacked dimension", sp.n_x(), x.len())?;
    let free = part.nonzero();
    if free.is_empty() {
        return Err(Error::EmptyFace);
    }
    let delta = sp.delta();
    let nu = DVector::from_iterator(free.len(), free.iter().map(|&i| delta[i] * x[i].signum()));
    Ok(ReducedQuadratic { sp, state, free, nu })
}

impl ReducedQuadratic<'_> {
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn embed(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.sp.n_x());
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = w[k];
        }
        x
    }

    pub fn restrict(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| x[i]))
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.sp.smooth_value(self.state, &self.embed(w)) + self.nu.dot(w)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let x = self.embed(w);
        let (_, g) = self
            .sp
            .smooth_value_grad(self.state, &x)
            .expect("embedded point has the stacked dimension");
        self.restrict(&g) + &self.nu
    }

    /// Right-hand side of the normal equations `Q w = λ Pᵀ Mᵀ s^k − ν`.
    pub fn rhs(&self) -> DVector<f64> {
        let mts = self.sp.apply_mt(&self.state.shift) * self.state.lambda;
        self.restrict(&mts) - &self.nu
    }
}

impl SpdOperator for ReducedQuadratic<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let x = self.embed(w);
        let n = self.sp.n();
        let mut hx = self.sp.apply_mt(&self.sp.apply_m(&x)) * self.state.lambda;
        let cu = self.sp.apply_c(&x.as_slice()[..n]);
        for i in 0..n {
            hx[i] += 2.0 * cu[i];
        }
        self.restrict(&hx)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// `‖ρ^l‖ / ‖ρ^0‖` at exit (0 when the initial residual vanishes).
    pub relative_residual: f64,
}

/// Conjugate gradient for `Q w = rhs` from `start`; stops when
/// `‖ρ^l‖ ≤ tol · ‖ρ^0‖` or after `max_iters` iterations.
pub fn cg_solve(
    op: &impl SpdOperator,
    rhs: &DVector<f64>,
    start: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    check_len("rhs", "operator order", op.dim(), rhs.len())?;
    check_len("start", "operator order", op.dim(), start.len())?;
    let mut w = start.clone();
    let mut r = rhs - op.apply(&w);
    let r0 = r.norm();
    if !r0.is_finite() {
        return Err(Error::NonFinite("CG residual"));
    }
    if r0 == 0.0 {
        return Ok(CgOutcome {
            solution: w,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > tol * r0 {
        let qp = op.apply(&p);
        let curvature = p.dot(&qp);
        if !(curvature > 0.0) {
            return Err(Error::CgBreakdown(curvature));
        }
        let alpha = rr / curvature;
        w.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &qp, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
        iterations += 1;
        if !rr.is_finite() || !all_finite(&w) {
            return Err(Error::NonFinite("CG iterate"));
        }
    }
    Ok(CgOutcome {
        solution: w,
        iterations,
        relative_residual: rr.sqrt() / r0,
    })
}

/// CG iteration cap for a restricted problem with `free` coordinates.
pub fn cg_iteration_cap(free: usize) -> usize {
    (free / 2).max(1)
}

/// Orthogonal projection of `z` onto the closed orthant face containing `x_ref`.
pub fn project_onto_face(z: &DVector<f64>, x_ref: &DVector<f64>) -> DVector<f64> {
    z.zip_map(x_ref, |zi, xi| {
        if xi > 0.0 {
            zi.max(0.0)
        } else if xi < 0.0 {
            zi.min(0.0)
        } else {
            0.0
        }
    })
}

/// `true` when every coordinate of `y` is zero or has the sign of `x_ref`,
/// and `y` vanishes wherever `x_ref` does.
pub fn in_closed_face(y: &DVector<f64>, x_ref: &DVector<f64>) -> bool {
    y.iter().zip(x_ref.iter()).all(|(&yi, &xi)| {
        if xi > 0.0 {
            yi >= 0.0
        } else if xi < 0.0 {
            yi <= 0.0
        } else {
            yi == 0.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub x: DVector<f64>,
    pub alpha: f64,
    pub trials: usize,
}

pub const LINE_SEARCH_MAX_HALVINGS: usize = 60;

/// Projected backtracking along `z_next − x_k` with `α ∈ {1, ½, ¼, …}`.
///
/// Accepts the first `x⁺ = P(x_k + α d; x_k)` with
/// `H^k(x⁺) − H^k(x_k) ≤ η ⟨∇H^k_F(x_k), x⁺ − x_k⟩`, where `∇H^k_F` is the
/// gradient of the smooth face restriction (`∇G^k + ν` on nonzeros, 0 on zeros).
pub fn line_search(
    sp: &StackedProblem,
    state: &SubproblemState,
    x_k: &DVector<f64>,
    z_next: &DVector<f64>,
    eta: f64,
) -> Result<LineSearchOutcome> {
    check_len("x_k", "stacked dimension", sp.n_x(), x_k.len())?;
    check_len("z_next", "stacked dimension", sp.n_x(), z_next.len())?;
    let (g_val, grad) = sp.smooth_value_grad(state, x_k)?;
    let h_k = g_val + sp.weighted_l1(x_k);
    let delta = sp.delta();
    let face_grad = DVector::from_fn(x_k.len(), |i, _| {
        let xi = x_k[i];
        if xi == 0.0 {
            0.0
        } else {
            grad[i] + delta[i] * xi.signum()
        }
    });
    // zero coordinates of x_k stay at zero through the projection
    let direction = z_next - x_k;

    let mut alpha = 1.0;
    for trial in 0..=LINE_SEARCH_MAX_HALVINGS {
        let candidate = project_onto_face(&(x_k + &direction * alpha), x_k);
        let h_new = sp.subproblem_objective(state, &candidate);
        if !h_new.is_finite() {
            return Err(Error::NonFinite("line search objective"));
        }
        let predicted = face_grad.dot(&(&candidate - x_k));
        if h_new - h_k <= eta * predicted {
            return Ok(LineSearchOutcome {
                x: candidate,
                alpha,
                trials: trial + 1,
            });
        }
        alpha *= 0.5;
    }
    Err(Error::LineSearchFailed(LINE_SEARCH_MAX_HALVINGS))
}

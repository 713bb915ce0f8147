//! Problem data and the stacked single-variable form.
//!
//! The original problem is
//!
//! ```text
//! min  uᵀC u + τ1‖u‖₁ + τ2‖D u‖₁   s.t.  A u = b
//! ```
//!
//! Splitting `d = D u` and stacking `x = [u; d]` turns it into
//! `min F(x) + Σ δ_i |x_i|  s.t.  M x = s` with `M = [[A, 0], [D, −I]]`,
//! `s = [b; 0]` and `F(x) = uᵀC u`. Every solver in the crate works on the
//! stacked form through [`StackedProblem`].

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{max_eigenvalue_bound, SparseRows};

/// `min uᵀCu + τ1‖u‖₁ + τ2‖Du‖₁  s.t.  Au = b`, with `C` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedL1Problem {
    c: DMatrix<f64>,
    tau1: f64,
    tau2: f64,
    d: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl ConstrainedL1Problem {
    pub fn new(
        c: DMatrix<f64>,
        tau1: f64,
        tau2: f64,
        d: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let n = c.nrows();
        check_len("C rows", "C columns", n, c.ncols())?;
        check_len("D columns", "C order", n, d.ncols())?;
        check_len("A columns", "C order", n, a.ncols())?;
        check_len("b length", "A rows", a.nrows(), b.len())?;
        if n == 0 {
            return Err(Error::InvalidProblem("C must have at least one row".into()));
        }
        if !(tau1 >= 0.0 && tau1.is_finite()) || !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "regularization weights must be finite and nonnegative (tau1={tau1}, tau2={tau2})"
            )));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&c) || !finite(&d) || !finite(&a) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidProblem("problem data contains non-finite entries".into()));
        }
        let scale = c.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidProblem(format!("C is not symmetric at ({i}, {j})")));
                }
            }
        }
        if c.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { what: "C".into() });
        }
        Ok(Self {
            c,
            tau1,
            tau2,
            d,
            a,
            b,
        })
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn tau1(&self) -> f64 {
        self.tau1
    }
    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// Number of `u` coordinates.
    pub fn n(&self) -> usize {
        self.c.nrows()
    }
    /// Number of rows of `D`.
    pub fn q(&self) -> usize {
        self.d.nrows()
    }
    /// Number of linear constraints.
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Value of the original objective at `u`.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let cu = &self.c * u;
        u.dot(&cu) + self.tau1 * u.lp_norm(1) + self.tau2 * (&self.d * u).lp_norm(1)
    }

    /// Same problem with different regularization weights.
    pub fn with_weights(&self, tau1: f64, tau2: f64) -> Result<Self> {
        Self::new(self.c.clone(), tau1, tau2, self.d.clone(), self.a.clone(), self.b.clone())
    }
}

/// The stacked form `min F(x) + Σ δ_i|x_i|  s.t.  Mx = s` with cached operator
/// norms.
#[derive(Debug, Clone)]
pub struct StackedProblem {
    problem: ConstrainedL1Problem,
    m_dense: DMatrix<f64>,
    s: DVector<f64>,
    delta: DVector<f64>,
    m_norm_sq: f64,
    c_max_eig: f64,
    c_sp: SparseRows,
    a_sp: SparseRows,
    d_sp: SparseRows,
}

/// Penalty and shifted right-hand side `s^k` of one Bregman subproblem
/// `H^k(x) = F(x) + (λ/2)‖Mx − s^k‖² + Σ δ_i|x_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemState {
    pub shift: DVector<f64>,
    pub lambda: f64,
}

impl SubproblemState {
    /// `s^0 = 0`.
    pub fn initial(sp: &StackedProblem, lambda: f64) -> Self {
        Self {
            shift: DVector::zeros(sp.n_s()),
            lambda,
        }
    }

    /// Bregman update `s^{k} = s^{k−1} + s − M x^k`.
    pub fn advance(&mut self, sp: &StackedProblem, x: &DVector<f64>) {
        let mx = sp.apply_m(x);
        self.shift += sp.s() - mx;
    }

    /// Multiplier estimate `μ = λ (s^k − s)` of the augmented Lagrangian form.
    pub fn multiplier(&self, sp: &StackedProblem) -> DVector<f64> {
        (&self.shift - sp.s()) * self.lambda
    }
}

/// Builds the stacked single-variable form of `problem`.
pub fn stack(problem: &ConstrainedL1Problem) -> Result<StackedProblem> {
    let (n, q, m) = (problem.n(), problem.q(), problem.m());
    check_len("D columns", "A columns", problem.a.ncols(), problem.d.ncols())?;
    let n_x = n + q;
    let n_s = m + q;

    let mut m_dense = DMatrix::zeros(n_s, n_x);
    m_dense.view_mut((0, 0), (m, n)).copy_from(&problem.a);
    m_dense.view_mut((m, 0), (q, n)).copy_from(&problem.d);
    for i in 0..q {
        m_dense[(m + i, n + i)] = -1.0;
    }
    let mut s = DVector::zeros(n_s);
    s.rows_mut(0, m).copy_from(&problem.b);
    let delta = DVector::from_fn(n_x, |i, _| if i < n { problem.tau1 } else { problem.tau2 });

    let mut sp = StackedProblem {
        c_sp: SparseRows::from_dense(&problem.c),
        a_sp: SparseRows::from_dense(&problem.a),
        d_sp: SparseRows::from_dense(&problem.d),
        problem: problem.clone(),
        m_dense,
        s,
        delta,
        m_norm_sq: 0.0,
        c_max_eig: 0.0,
    };
    sp.m_norm_sq = max_eigenvalue_bound(n_x, |v| sp.apply_mt(&sp.apply_m(v)));
    sp.c_max_eig = max_eigenvalue_bound(n, |v| {
        let mut out = DVector::zeros(n);
        sp.c_sp.mul(v.as_slice(), out.as_mut_slice());
        out
    });
    Ok(sp)
}

impl StackedProblem {
    pub fn problem(&self) -> &ConstrainedL1Problem {
        &self.problem
    }
    /// The dense block matrix `[[A, 0], [D, −I]]`.
    pub fn m_matrix(&self) -> &DMatrix<f64> {
        &self.m_dense
    }
    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }
    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }
    pub fn n(&self) -> usize {
        self.problem.n()
    }
    pub fn q(&self) -> usize {
        self.problem.q()
    }
    pub fn n_x(&self) -> usize {
        self.problem.n() + self.problem.q()
    }
    pub fn n_s(&self) -> usize {
        self.problem.m() + self.problem.q()
    }
    /// Cached upper estimate of `‖M‖² = λ_max(MᵀM)`.
    pub fn m_norm_sq(&self) -> f64 {
        self.m_norm_sq
    }
    /// Cached upper estimate of the Lipschitz constant `L = 2 λ_max(C)` of `∇F`.
    pub fn smooth_lipschitz(&self) -> f64 {
        2.0 * self.c_max_eig
    }

    /// `M x = [A u; D u − d]`.
    pub fn apply_m(&self, x: &DVector<f64>) -> DVector<f64> {
        let (n, m, q) = (self.n(), self.problem.m(), self.q());
        let mut out = DVector::zeros(m + q);
        let xs = x.as_slice();
        self.a_sp.mul(&xs[..n], &mut out.as_mut_slice()[..m]);
        self.d_sp.mul(&xs[..n], &mut out.as_mut_slice()[m..]);
        for i in 0..q {
            out[m + i] -= xs[n + i];
        }
        out
    }

    /// `Mᵀ y = [Aᵀ y_A + Dᵀ y_D; −y_D]`.
    pub fn apply_mt(&self, y: &DVector<f64>) -> DVector<f64> {
        let (n, m, q) = (self.n(), self.problem.m(), self.q());
        let mut out = DVector::zeros(n + q);
        let ys = y.as_slice();
        self.a_sp.mul_t_add(1.0, &ys[..m], &mut out.as_mut_slice()[..n]);
        self.d_sp.mul_t_add(1.0, &ys[m..], &mut out.as_mut_slice()[..n]);
        for i in 0..q {
            out[n + i] = -ys[m + i];
        }
        out
    }

    /// `C u` for the `u` block of `x`.
    pub(crate) fn apply_c(&self, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        self.c_sp.mul(u, out.as_mut_slice());
        out
    }

    pub(crate) fn apply_a(&self, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.problem.m());
        self.a_sp.mul(u, out.as_mut_slice());
        out
    }

    pub(crate) fn apply_d(&self, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.q());
        self.d_sp.mul(u, out.as_mut_slice());
        out
    }

    pub(crate) fn a_sparse(&self) -> &SparseRows {
        &self.a_sp
    }
    pub(crate) fn d_sparse(&self) -> &SparseRows {
        &self.d_sp
    }

    /// `F(x) = uᵀC u`.
    pub fn smooth_part(&self, x: &DVector<f64>) -> f64 {
        let u = &x.as_slice()[..self.n()];
        let cu = self.apply_c(u);
        u.iter().zip(cu.iter()).map(|(a, b)| a * b).sum()
    }

    /// `Σ δ_i |x_i|`.
    pub fn weighted_l1(&self, x: &DVector<f64>) -> f64 {
        x.iter().zip(self.delta.iter()).map(|(v, w)| w * v.abs()).sum()
    }

    /// `G^k(x) = F(x) + (λ/2)‖Mx − s^k‖²` and its gradient
    /// `∇G^k(x) = [2Cu; 0] + λ Mᵀ(Mx − s^k)`.
    pub fn smooth_value_grad(&self, state: &SubproblemState, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_len("x", "stacked dimension", self.n_x(), x.len())?;
        let n = self.n();
        let u = &x.as_slice()[..n];
        let cu = self.apply_c(u);
        let f: f64 = u.iter().zip(cu.iter()).map(|(a, b)| a * b).sum();
        let r = self.apply_m(x) - &state.shift;
        let value = f + 0.5 * state.lambda * r.norm_squared();
        let mut grad = self.apply_mt(&r) * state.lambda;
        for i in 0..n {
            grad[i] += 2.0 * cu[i];
        }
        Ok((value, grad))
    }

    /// `G^k(x)` alone.
    pub fn smooth_value(&self, state: &SubproblemState, x: &DVector<f64>) -> f64 {
        let r = self.apply_m(x) - &state.shift;
        self.smooth_part(x) + 0.5 * state.lambda * r.norm_squared()
    }

    /// `H^k(x) = G^k(x) + Σ δ_i |x_i|`.
    pub fn subproblem_objective(&self, state: &SubproblemState, x: &DVector<f64>) -> f64 {
        self.smooth_value(state, x) + self.weighted_l1(x)
    }

    /// `L̂ = L + λ‖M‖²`, a Lipschitz constant of `∇G^k` valid for every `k`.
    pub fn lipschitz_bound(&self, lambda: f64) -> f64 {
        self.smooth_lipschitz() + lambda * self.m_norm_sq
    }

    /// `‖Mx − s‖`.
    pub fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        (self.apply_m(x) - &self.s).norm()
    }

    /// `(‖Au − b‖, ‖Du − d‖)` at `x = [u; d]`.
    pub fn violations(&self, x: &DVector<f64>) -> (f64, f64) {
        let r = self.apply_m(x) - &self.s;
        let m = self.problem.m();
        (r.rows(0, m).norm(), r.rows(m, self.q()).norm())
    }

    /// The original objective evaluated at the `u` block of `x`.
    pub fn original_objective(&self, x: &DVector<f64>) -> f64 {
        self.problem.objective(&self.u_block(x))
    }

    pub fn u_block(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.n()).into_owned()
    }

    /// `∇F(x) − Mᵀμ`, the gradient of the Lagrangian's smooth part.
    pub fn lagrangian_gradient(&self, x: &DVector<f64>, multiplier: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let cu = self.apply_c(&x.as_slice()[..n]);
        let mut g = -self.apply_mt(multiplier);
        for i in 0..n {
            g[i] += 2.0 * cu[i];
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn tiny(c: DMatrix<f64>, a: DMatrix<f64>, d: DMatrix<f64>, b: DVector<f64>) -> ConstrainedL1Problem {
        ConstrainedL1Problem::new(c, 0.01, 0.001, d, a, b).unwrap()
    }

    #[test]
    fn stacked_shapes() {
        let p = tiny(
            DMatrix::identity(3, 3),
            DMatrix::from_element(2, 3, 1.0),
            DMatrix::from_element(2, 3, 0.5),
            DVector::from_vec(vec![1.0, 2.0]),
        );
        let sp = stack(&p).unwrap();
        assert_eq!(sp.m_matrix().shape(), (4, 5));
        assert_eq!(sp.n_s(), 4);
        assert_eq!(sp.n_x(), 5);
        assert_eq!(sp.s().as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(sp.delta().as_slice(), &[0.01, 0.01, 0.01, 0.001, 0.001]);
    }

    #[test]
    fn block_substitution() {
        let p = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            1.0,
            1.0,
            dmatrix![-1.0, 1.0],
            dmatrix![1.0, 1.0],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        assert_eq!(sp.m_matrix(), &dmatrix![1.0, 1.0, 0.0; -1.0, 1.0, -1.0]);
        assert_eq!(sp.s().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn dimension_errors_name_the_pair() {
        let err = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            0.0,
            0.0,
            DMatrix::zeros(1, 3),
            DMatrix::zeros(1, 2),
            DVector::zeros(1),
        )
        .unwrap_err();
        match err {
            Error::DimensionMismatch { left, right, .. } => {
                assert_eq!(left, "D columns");
                assert_eq!(right, "C order");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            0.0,
            0.0,
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 2),
            DVector::zeros(3),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { left: "b length", right: "A rows", .. }));
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let bad = ConstrainedL1Problem::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            0.0,
            0.0,
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        );
        assert!(matches!(bad, Err(Error::NotPositiveDefinite { .. })));
        let asym = ConstrainedL1Problem::new(
            dmatrix![1.0, 0.1; 0.0, 1.0],
            0.0,
            0.0,
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        );
        assert!(matches!(asym, Err(Error::InvalidProblem(_))));
        let neg = ConstrainedL1Problem::new(
            DMatrix::identity(1, 1),
            -1.0,
            0.0,
            DMatrix::zeros(0, 1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        );
        assert!(matches!(neg, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn one_dimensional_value_and_gradient() {
        // C=[[1]], M=[[1]] needs A=[[1]], no D rows.
        let p = ConstrainedL1Problem::new(
            dmatrix![1.0],
            0.0,
            0.0,
            DMatrix::zeros(0, 1),
            dmatrix![1.0],
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        let st = SubproblemState::initial(&sp, 1.0);
        let (v, g) = sp.smooth_value_grad(&st, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(v, 6.0);
        assert_eq!(g[0], 6.0);
        let (v0, g0) = sp.smooth_value_grad(&st, &DVector::zeros(1)).unwrap();
        assert_eq!(v0, 0.0);
        assert_eq!(g0[0], 0.0);
    }

    #[test]
    fn lipschitz_of_identities() {
        // C = I (1×1), M = I (2×2): A = [[1],[0]]... M is [[A,0],[D,-I]]; use A = [1], D = [0] so
        // M = [[1, 0], [0, -1]] and MᵀM = I.
        let p = ConstrainedL1Problem::new(dmatrix![1.0], 0.0, 0.0, dmatrix![0.0], dmatrix![1.0], DVector::zeros(1))
            .unwrap();
        let sp = stack(&p).unwrap();
        assert!((sp.lipschitz_bound(1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_with_scaled_operator() {
        // C = [[2]] → L = 4; M = [[2, 0], [0, -1]] has λ_max(MᵀM) = 4; λ = 0.5 → 4 + 2 = 6.
        let p = ConstrainedL1Problem::new(dmatrix![2.0], 0.0, 0.0, dmatrix![0.0], dmatrix![2.0], DVector::zeros(1))
            .unwrap();
        let sp = stack(&p).unwrap();
        let exact = (sp.m_matrix().transpose() * sp.m_matrix()).symmetric_eigen().eigenvalues.max();
        assert!((exact - 4.0).abs() < 1e-12);
        assert!((sp.lipschitz_bound(0.5) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn stack_of_wrong_state_length_errors() {
        let p = ConstrainedL1Problem::new(dmatrix![1.0], 0.0, 0.0, dmatrix![0.0], dmatrix![1.0], DVector::zeros(1))
            .unwrap();
        let sp = stack(&p).unwrap();
        let st = SubproblemState::initial(&sp, 1.0);
        assert!(sp.smooth_value_grad(&st, &DVector::zeros(3)).is_err());
    }
}

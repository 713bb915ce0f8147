//! Brute-force reference solver for very small instances.
//!
//! Every sign pattern `σ ∈ {−1, 0, +1}^{n_x}` fixes an orthant face. On that
//! face the ℓ1 term is linear, so the face minimizer solves an equality
//! constrained quadratic program whose KKT system is linear. The optimum is
//! the best sign-consistent face minimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{stack, ConstrainedL1Problem};

/// Largest stacked dimension accepted (3^12 = 531441 linear solves).
pub const MAX_STACKED_DIM: usize = 12;

const SIGN_TOL: f64 = 1e-12;
const KKT_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignPattern(pub Vec<i8>);

impl SignPattern {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices with a nonzero sign.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] != 0).collect()
    }

    fn first(n: usize) -> Self {
        SignPattern(vec![-1; n])
    }

    /// Lexicographic successor in −1 < 0 < +1 order.
    fn advance(&mut self) -> bool {
        for s in self.0.iter_mut().rev() {
            if *s < 1 {
                *s += 1;
                return true;
            }
            *s = -1;
        }
        false
    }
}

/// `min ½xᵀHx + gᵀx + c₀ + Σ δ_i|x_i|  s.t.  Mx = s` with `H` positive
/// semidefinite and positive definite on the null space of `M`.
#[derive(Debug, Clone)]
pub struct QuadraticL1 {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub delta: DVector<f64>,
    pub m: DMatrix<f64>,
    pub s: DVector<f64>,
}

impl QuadraticL1 {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x))
            + self.g.dot(x)
            + self.c0
            + self.delta.iter().zip(x.iter()).map(|(d, v)| d * v.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// `u` block (the whole point for [`enumerate_quadratic`]).
    pub u: DVector<f64>,
    pub x: DVector<f64>,
    pub objective: f64,
    pub pattern: SignPattern,
    /// A multiplier for `Mx = s` satisfying the face stationarity equations.
    pub multiplier: DVector<f64>,
}

/// Solves the square system, falling back to least squares when the matrix is
/// singular. `None` unless the returned point satisfies the system.
fn solve_kkt(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if k.is_empty() {
        return Some(DVector::zeros(0));
    }
    let scale = k.amax().max(rhs.amax()).max(1.0);
    let accept = |z: DVector<f64>| {
        let r = k * &z - rhs;
        (z.iter().all(|v| v.is_finite()) && r.amax() <= KKT_RESIDUAL_TOL * scale).then_some(z)
    };
    if let Some(z) = k.clone().full_piv_lu().solve(rhs).and_then(accept) {
        return Some(z);
    }
    let svd = k.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).ok().and_then(accept)
}

/// Best sign-consistent face minimizer of a quadratic ℓ1 problem.
pub fn enumerate_quadratic(qp: &QuadraticL1) -> Result<OracleSolution> {
    let n_x = qp.h.nrows();
    let n_s = qp.m.nrows();
    if n_x > MAX_STACKED_DIM {
        return Err(Error::TooLarge {
            limit: MAX_STACKED_DIM,
            found: n_x,
        });
    }
    let mut best: Option<OracleSolution> = None;
    let mut pattern = SignPattern::first(n_x);
    loop {
        let support = pattern.support();
        let p = support.len();
        // [[H_PP, −M_Pᵀ], [M_P, 0]] [x_P; μ] = [−g_P − ν_P; s]
        let mut k = DMatrix::zeros(p + n_s, p + n_s);
        let mut rhs = DVector::zeros(p + n_s);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                k[(a, b)] = qp.h[(i, j)];
            }
            for r in 0..n_s {
                k[(a, p + r)] = -qp.m[(r, i)];
                k[(p + r, a)] = qp.m[(r, i)];
            }
            rhs[a] = -qp.g[i] - qp.delta[i] * f64::from(pattern.0[i]);
        }
        rhs.rows_mut(p, n_s).copy_from(&qp.s);

        if let Some(z) = solve_kkt(&k, &rhs) {
            let consistent = support.iter().enumerate().all(|(a, &i)| z[a] * f64::from(pattern.0[i]) > -SIGN_TOL);
            if consistent {
                let mut x = DVector::zeros(n_x);
                for (a, &i) in support.iter().enumerate() {
                    x[i] = z[a];
                }
                let objective = qp.objective(&x);
                if best.as_ref().is_none_or(|b| objective < b.objective) {
                    best = Some(OracleSolution {
                        u: x.clone(),
                        x,
                        objective,
                        pattern: pattern.clone(),
                        multiplier: z.rows(p, n_s).into_owned(),
                    });
                }
            }
        }
        if !pattern.advance() {
            break;
        }
    }
    best.ok_or(Error::Infeasible)
}

/// Global minimizer of the original problem by sign-pattern enumeration over
/// the stacked variable `x = [u; Du]`.
pub fn enumerate_solve(problem: &ConstrainedL1Problem) -> Result<OracleSolution> {
    let n = problem.n();
    let n_x = n + problem.q();
    if n_x > MAX_STACKED_DIM {
        return Err(Error::TooLarge {
            limit: MAX_STACKED_DIM,
            found: n_x,
        });
    }
    let sp = stack(problem)?;
    let mut h = DMatrix::zeros(n_x, n_x);
    h.view_mut((0, 0), (n, n)).copy_from(&(problem.c() * 2.0));
    let qp = QuadraticL1 {
        h,
        g: DVector::zeros(n_x),
        c0: 0.0,
        delta: sp.delta().clone(),
        m: sp.m_matrix().clone(),
        s: sp.s().clone(),
    };
    let mut sol = enumerate_quadratic(&qp)?;
    sol.u = sol.x.rows(0, n).into_owned();
    sol.objective = problem.objective(&sol.u);
    Ok(sol)
}

//! ADMM comparison baseline on the three-block splitting
//!
//! ```text
//! min uᵀCu + τ1‖v‖₁ + τ2‖d‖₁   s.t.  Au = b,  u − v = 0,  Du − d = 0
//! ```
//!
//! with an extrapolation step along the last primal displacement
//! `y^{k+1} − y^k`, `y = [u; v; d]`. The extrapolation exactly minimizes the
//! augmented Lagrangian along that ray and is kept only when it lowers it, so
//! the solver reports itself as "AL_SOP-like".

use std::time::Instant;

use nalgebra::DVector;

use crate::driver::{InnerIterations, IterationRecord, SolveReport, SolverConfig, StepKind, Termination};
use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::model::{stack, ConstrainedL1Problem, StackedProblem};
use crate::prox::soft_threshold;
use crate::subspace::{cg_iteration_cap, cg_solve, SpdOperator};

pub const SOLVER_NAME: &str = "admm (AL_SOP-like)";

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub penalty: f64,
    pub tol_b: f64,
    pub tol_cg: f64,
    pub max_iters: usize,
    pub accelerate: bool,
    pub record_trace: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            tol_b: 1e-4,
            tol_cg: 1e-2,
            max_iters: 25_000,
            accelerate: true,
            record_trace: false,
        }
    }
}

impl AdmmConfig {
    /// Shares penalty, stopping tolerance and CG tolerance with a Bregman config.
    pub fn from_solver(cfg: &SolverConfig) -> Self {
        Self {
            penalty: cfg.lambda,
            tol_b: cfg.tol_b,
            tol_cg: cfg.tol_cg,
            record_trace: cfg.record_trace,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("penalty", self.penalty), ("tol_b", self.tol_b), ("tol_cg", self.tol_cg)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Primal blocks and scaled multipliers (`w = multiplier / penalty`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub d: DVector<f64>,
    pub w_a: DVector<f64>,
    pub w_v: DVector<f64>,
    pub w_d: DVector<f64>,
    pub penalty: f64,
}

impl AdmmState {
    pub fn zeros(sp: &StackedProblem, penalty: f64) -> Self {
        let (n, m, q) = (sp.n(), sp.problem().m(), sp.q());
        Self {
            u: DVector::zeros(n),
            v: DVector::zeros(n),
            d: DVector::zeros(q),
            w_a: DVector::zeros(m),
            w_v: DVector::zeros(n),
            w_d: DVector::zeros(q),
            penalty,
        }
    }

    /// `(‖Au − b‖, ‖Du − d‖, ‖u − v‖)`.
    pub fn violations(&self, sp: &StackedProblem) -> (f64, f64, f64) {
        let ra = sp.apply_a(self.u.as_slice()) - sp.problem().b();
        let rd = sp.apply_d(self.u.as_slice()) - &self.d;
        (ra.norm(), rd.norm(), (&self.u - &self.v).norm())
    }

    /// Augmented Lagrangian in scaled form, without the constant `−(ρ/2)‖w‖²`.
    pub fn merit(&self, sp: &StackedProblem) -> f64 {
        let p = sp.problem();
        let rho = self.penalty;
        let cu = sp.apply_c(self.u.as_slice());
        let ra = sp.apply_a(self.u.as_slice()) - p.b() + &self.w_a;
        let rv = &self.u - &self.v + &self.w_v;
        let rd = sp.apply_d(self.u.as_slice()) - &self.d + &self.w_d;
        self.u.dot(&cu)
            + p.tau1() * self.v.lp_norm(1)
            + p.tau2() * self.d.lp_norm(1)
            + 0.5 * rho * (ra.norm_squared() + rv.norm_squared() + rd.norm_squared())
    }

    fn stacked_x(&self) -> DVector<f64> {
        let n = self.u.len();
        let mut x = DVector::zeros(n + self.d.len());
        x.rows_mut(0, n).copy_from(&self.u);
        x.rows_mut(n, self.d.len()).copy_from(&self.d);
        x
    }

    /// `μ = −ρ [w_A; w_D]` in the sign convention of the stacked Lagrangian.
    fn stacked_multiplier(&self) -> DVector<f64> {
        let m = self.w_a.len();
        let mut mu = DVector::zeros(m + self.w_d.len());
        mu.rows_mut(0, m).copy_from(&(&self.w_a * -self.penalty));
        mu.rows_mut(m, self.w_d.len()).copy_from(&(&self.w_d * -self.penalty));
        mu
    }
}

/// `2C + ρ(AᵀA + I + DᵀD)`, the Hessian of the `u` subproblem.
struct UBlockOperator<'a> {
    sp: &'a StackedProblem,
    rho: f64,
}

impl SpdOperator for UBlockOperator<'_> {
    fn dim(&self) -> usize {
        self.sp.n()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let vs = v.as_slice();
        let mut out = self.sp.apply_c(vs) * 2.0;
        let av = self.sp.apply_a(vs);
        let dv = self.sp.apply_d(vs);
        let o = out.as_mut_slice();
        self.sp.a_sparse().mul_t_add(self.rho, av.as_slice(), o);
        self.sp.d_sparse().mul_t_add(self.rho, dv.as_slice(), o);
        for (oi, vi) in o.iter_mut().zip(vs) {
            *oi += self.rho * vi;
        }
        out
    }
}

/// Exact minimizer over `t ≥ 0` of the convex piecewise quadratic
/// `P t + ½ Q t² + Σ w_i |z_i + t Δ_i|` (constant dropped). Returns `None` when
/// the function does not decrease to the right of 0 or is unbounded below.
pub(crate) fn piecewise_quadratic_argmin(p: f64, q: f64, z: &[f64], dz: &[f64], w: &[f64]) -> Option<f64> {
    let mut slope_terms = 0.0;
    let mut kinks: Vec<(f64, f64)> = Vec::new();
    for i in 0..z.len() {
        if dz[i] == 0.0 || w[i] == 0.0 {
            continue;
        }
        let sign_now = if z[i] != 0.0 { z[i].signum() } else { dz[i].signum() };
        slope_terms += w[i] * dz[i] * sign_now;
        if z[i] != 0.0 && z[i].signum() != dz[i].signum() {
            // crossing zero flips the sign: slope jumps by 2 w |Δ|
            kinks.push((-z[i] / dz[i], 2.0 * w[i] * dz[i].abs()));
        }
    }
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = p + slope_terms;
    if s >= 0.0 {
        return None;
    }
    let mut t_lo = 0.0;
    for (t_k, jump) in kinks {
        if q > 0.0 {
            let t = -s / q;
            if t <= t_k {
                return Some(t.max(t_lo));
            }
        }
        if s + q * t_k + jump >= 0.0 {
            return Some(t_k);
        }
        s += jump;
        t_lo = t_k;
    }
    if q > 0.0 {
        Some((-s / q).max(t_lo))
    } else {
        None
    }
}

fn try_extrapolate(sp: &StackedProblem, st: &mut AdmmState, prev: &AdmmState) -> bool {
    let p = sp.problem();
    let rho = st.penalty;
    let du = &st.u - &prev.u;
    let dv = &st.v - &prev.v;
    let dd = &st.d - &prev.d;
    if du.norm() == 0.0 && dv.norm() == 0.0 && dd.norm() == 0.0 {
        return false;
    }
    let cu = sp.apply_c(st.u.as_slice());
    let cdu = sp.apply_c(du.as_slice());
    let adu = sp.apply_a(du.as_slice());
    let ddu = sp.apply_d(du.as_slice());
    let ra = sp.apply_a(st.u.as_slice()) - p.b() + &st.w_a;
    let rv = &st.u - &st.v + &st.w_v;
    let rd = sp.apply_d(st.u.as_slice()) - &st.d + &st.w_d;
    let dv_res = &du - &dv;
    let dd_res = &ddu - &dd;
    let q = 2.0 * du.dot(&cdu) + rho * (adu.norm_squared() + dv_res.norm_squared() + dd_res.norm_squared());
    let lin = 2.0 * cu.dot(&du) + rho * (ra.dot(&adu) + rv.dot(&dv_res) + rd.dot(&dd_res));

    let z: Vec<f64> = st.v.iter().chain(st.d.iter()).copied().collect();
    let dz: Vec<f64> = dv.iter().chain(dd.iter()).copied().collect();
    let w: Vec<f64> = std::iter::repeat(p.tau1())
        .take(st.v.len())
        .chain(std::iter::repeat(p.tau2()).take(st.d.len()))
        .collect();
    let Some(t) = piecewise_quadratic_argmin(lin, q, &z, &dz, &w) else {
        return false;
    };
    if !(t > 0.0 && t.is_finite()) {
        return false;
    }
    let mut trial = st.clone();
    trial.u.axpy(t, &du, 1.0);
    trial.v.axpy(t, &dv, 1.0);
    trial.d.axpy(t, &dd, 1.0);
    if trial.merit(sp) < st.merit(sp) {
        *st = trial;
        true
    } else {
        false
    }
}

/// ADMM on the original problem.
pub fn admm_solve(problem: &ConstrainedL1Problem, cfg: &AdmmConfig) -> Result<SolveReport> {
    admm_solve_stacked(&stack(problem)?, cfg)
}

/// ADMM reusing the operators cached in an existing stacked problem.
pub fn admm_solve_stacked(sp: &StackedProblem, cfg: &AdmmConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let started = Instant::now();
    let p = sp.problem();
    let rho = cfg.penalty;
    let op = UBlockOperator { sp, rho };
    let cg_cap = cg_iteration_cap(sp.n());
    let mut st = AdmmState::zeros(sp, rho);
    let mut inner = InnerIterations::default();
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut accelerated = 0;
    let mut last_good = st.clone();

    let finish = |st: &AdmmState, iters: usize, termination: Termination, inner, accelerated, trace| {
        let x = st.stacked_x();
        let (va, vd) = sp.violations(&x);
        SolveReport {
            solver: SOLVER_NAME.to_string(),
            objective: sp.original_objective(&x),
            x_final: x.as_slice().to_vec(),
            multiplier: st.stacked_multiplier().as_slice().to_vec(),
            outer_iters: iters,
            accel_steps_taken: accelerated,
            accel_steps_rejected: 0,
            inner,
            termination,
            violation_a: va,
            violation_d: vd,
            wall_time: started.elapsed().as_secs_f64(),
            trace,
        }
    };

    let mut k = 0;
    loop {
        let (va, vd, vuv) = st.violations(sp);
        if let Some(t) = trace.as_mut() {
            let x = st.stacked_x();
            t.push(IterationRecord {
                k,
                residual: sp.residual_norm(&x),
                violation_a: va,
                violation_d: vd,
                subproblem_value: st.merit(sp),
                gamma: f64::NAN,
                step: StepKind::Admm,
            });
        }
        if va <= cfg.tol_b && vd <= cfg.tol_b && vuv <= cfg.tol_b {
            return Ok(finish(&st, k, Termination::Converged, inner, accelerated, trace));
        }
        if k >= cfg.max_iters {
            return Ok(finish(&st, k, Termination::MaxOuter, inner, accelerated, trace));
        }
        let prev = st.clone();

        // u-update: (2C + ρ(AᵀA + I + DᵀD)) u = ρ(Aᵀ(b − w_A) + (v − w_V) + Dᵀ(d − w_D))
        let mut rhs = &st.v - &st.w_v;
        let ba = p.b() - &st.w_a;
        let dd = &st.d - &st.w_d;
        sp.a_sparse().mul_t_add(1.0, ba.as_slice(), rhs.as_mut_slice());
        sp.d_sparse().mul_t_add(1.0, dd.as_slice(), rhs.as_mut_slice());
        rhs *= rho;
        let cg = match cg_solve(&op, &rhs, &st.u, cfg.tol_cg, cg_cap) {
            Ok(cg) => cg,
            Err(_) => return Ok(finish(&last_good, k, Termination::NumericalError, inner, accelerated, trace)),
        };
        inner.cg += cg.iterations;
        st.u = cg.solution;

        let du = sp.apply_d(st.u.as_slice());
        st.v = (&st.u + &st.w_v).map(|x| soft_threshold(x, p.tau1() / rho));
        st.d = (&du + &st.w_d).map(|x| soft_threshold(x, p.tau2() / rho));

        st.w_a += sp.apply_a(st.u.as_slice()) - p.b();
        st.w_v += &st.u - &st.v;
        st.w_d += &du - &st.d;

        if cfg.accelerate && try_extrapolate(sp, &mut st, &prev) {
            accelerated += 1;
        }
        if !all_finite(&st.u) || !all_finite(&st.w_a) || !all_finite(&st.w_v) {
            return Ok(finish(&last_good, k, Termination::NumericalError, inner, accelerated, trace));
        }
        last_good = st.clone();
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};

    fn brute_min(p: f64, q: f64, z: &[f64], dz: &[f64], w: &[f64]) -> f64 {
        let f = |t: f64| {
            p * t + 0.5 * q * t * t + (0..z.len()).map(|i| w[i] * (z[i] + t * dz[i]).abs()).sum::<f64>()
        };
        let mut best = (0.0, f(0.0));
        for i in 0..=200_000 {
            let t = i as f64 * 1e-4;
            let v = f(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        best.0
    }

    #[test]
    fn piecewise_argmin_matches_grid_search() {
        let cases: [(f64, f64, Vec<f64>, Vec<f64>, Vec<f64>); 4] = [
            (-3.0, 1.0, vec![], vec![], vec![]),
            (-3.0, 1.0, vec![1.0], vec![-1.0], vec![0.5]),
            (-1.0, 0.5, vec![0.5, -0.2], vec![-1.0, 0.3], vec![0.2, 1.0]),
            (-2.0, 0.1, vec![1.0, 0.0], vec![-1.0, 1.0], vec![0.3, 0.4]),
        ];
        for (p, q, z, dz, w) in cases {
            let t = piecewise_quadratic_argmin(p, q, &z, &dz, &w).unwrap();
            let tb = brute_min(p, q, &z, &dz, &w);
            assert!((t - tb).abs() < 2e-4, "{t} vs {tb}");
        }
        assert_eq!(piecewise_quadratic_argmin(1.0, 1.0, &[], &[], &[]), None);
        assert_eq!(piecewise_quadratic_argmin(-1.0, 0.0, &[], &[], &[]), None);
    }

    #[test]
    fn zero_problem_stops_at_first_check() {
        let p = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            0.1,
            0.1,
            dmatrix![-1.0, 1.0],
            dmatrix![1.0, 1.0],
            DVector::zeros(1),
        )
        .unwrap();
        let r = admm_solve(&p, &AdmmConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        assert_eq!(r.outer_iters, 0);
        assert!(r.x_final.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v_is_exact_prox_after_update() {
        let p = ConstrainedL1Problem::new(
            dmatrix![1.0, 0.2; 0.2, 2.0],
            0.3,
            0.0,
            DMatrix::zeros(0, 2),
            dmatrix![1.0, 1.0],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        let cfg = AdmmConfig {
            max_iters: 3,
            accelerate: false,
            tol_b: 1e-12,
            ..AdmmConfig::default()
        };
        let r = admm_solve_stacked(&sp, &cfg).unwrap();
        assert_eq!(r.termination, Termination::MaxOuter);
        assert_eq!(r.outer_iters, 3);
    }

    #[test]
    fn converges_on_a_small_equality_constrained_problem() {
        // min u₁² + u₂² s.t. u₁ + u₂ = 1 → (0.5, 0.5)
        let p = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            0.0,
            0.0,
            DMatrix::zeros(0, 2),
            dmatrix![1.0, 1.0],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let cfg = AdmmConfig {
            tol_b: 1e-8,
            ..AdmmConfig::default()
        };
        let r = admm_solve(&p, &cfg).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        assert!((r.x_final[0] - 0.5).abs() < 1e-6 && (r.x_final[1] - 0.5).abs() < 1e-6);
    }
}

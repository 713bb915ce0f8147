//! ℓ1 proximal operators and the FISTA inner solver for the Bregman subproblems.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::linalg::all_finite;
use crate::model::{StackedProblem, SubproblemState};
use crate::subspace::{min_norm_subgradient, partition};

/// Stopping rule of the inner FISTA solve: stop when two consecutive iterates
/// are within `tol_f`, or after `max_iters` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaConfig {
    pub tol_f: f64,
    pub max_iters: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            tol_f: 1e-5,
            max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `true` when the displacement test fired before the iteration cap.
    pub converged: bool,
    /// `‖g^k(x)‖∞` of the min-norm subgradient at the returned point.
    pub subgradient_inf: f64,
}

/// `sign(v) · max(0, |v| − t)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Componentwise `soft_threshold(v_i, step · δ_i)`.
pub fn prox_weighted_l1(v: &DVector<f64>, delta: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
    check_len("v", "delta", delta.len(), v.len())?;
    Ok(v.zip_map(delta, |vi, di| soft_threshold(vi, step * di)))
}

/// Approximately minimizes `H^k` by FISTA with constant step `1/L̂`.
///
/// Monotone variant: an extrapolated step that would increase `H^k` is
/// replaced by a plain proximal-gradient step from the previous iterate, so the
/// returned point never has a larger objective than `x0`.
pub fn fista_minimize(
    sp: &StackedProblem,
    state: &SubproblemState,
    x0: &DVector<f64>,
    cfg: &FistaConfig,
) -> Result<FistaOutcome> {
    check_len("x0", "stacked dimension", sp.n_x(), x0.len())?;
    let delta = sp.delta();
    let step = 1.0 / sp.lipschitz_bound(state.lambda);
    let prox_step = |p: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(p.len(), |i, _| soft_threshold(p[i] - step * g[i], step * delta[i]))
    };

    let mut x_prev = x0.clone();
    let mut h_prev = sp.subproblem_objective(state, &x_prev);
    let mut y = x0.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let (_, gy) = sp.smooth_value_grad(state, &y)?;
        let mut x_new = prox_step(&y, &gy);
        let mut h_new = sp.subproblem_objective(state, &x_new);
        if !(h_new <= h_prev) {
            let (_, gx) = sp.smooth_value_grad(state, &x_prev)?;
            x_new = prox_step(&x_prev, &gx);
            h_new = sp.subproblem_objective(state, &x_new);
        }
        if !h_new.is_finite() || !all_finite(&x_new) {
            return Err(Error::NonFinite("FISTA iterate"));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let diff = &x_new - &x_prev;
        let displacement = diff.norm();
        y = &x_new + diff * ((t - 1.0) / t_next);
        x_prev = x_new;
        h_prev = h_new;
        t = t_next;
        if displacement <= cfg.tol_f {
            converged = true;
            break;
        }
    }

    let (_, g) = sp.smooth_value_grad(state, &x_prev)?;
    let sub = min_norm_subgradient(&g, delta, &partition(&x_prev));
    Ok(FistaOutcome {
        subgradient_inf: sub.amax(),
        x: x_prev,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stack, ConstrainedL1Problem};
    use nalgebra::{dmatrix, DMatrix};

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(0.0, 7.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
    }

    #[test]
    fn weighted_prox_cases() {
        let v = DVector::from_vec(vec![3.0, -3.0]);
        let out = prox_weighted_l1(&v, &DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        assert_eq!(out.as_slice(), &[2.0, -3.0]);
        let v = DVector::from_vec(vec![0.3, -7.5, 2.0]);
        assert_eq!(prox_weighted_l1(&v, &DVector::zeros(3), 4.0).unwrap(), v);
        let v = DVector::from_vec(vec![0.5, -0.5]);
        let out = prox_weighted_l1(&v, &DVector::from_vec(vec![1.0, 1.0]), 1.0).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
        assert!(prox_weighted_l1(&v, &DVector::zeros(3), 1.0).is_err());
    }

    /// `G(x) = 0.5x² + 0.5(x − 6)² = (x − 3)² + 9`: C = [[0.5]], A = [[1]], λ = 1, s^k = 6.
    fn shifted_scalar(shift: f64) -> (StackedProblem, SubproblemState) {
        let p = ConstrainedL1Problem::new(dmatrix![0.5], 1.0, 0.0, DMatrix::zeros(0, 1), dmatrix![1.0], DVector::zeros(1))
            .unwrap();
        let sp = stack(&p).unwrap();
        let st = SubproblemState {
            shift: DVector::from_vec(vec![shift]),
            lambda: 1.0,
        };
        (sp, st)
    }

    #[test]
    fn scalar_prox_problem_matches_closed_form() {
        // (x − 3)² + |x|: 2(x − 3) + 1 = 0 → x = 2.5
        let (sp, st) = shifted_scalar(6.0);
        let cfg = FistaConfig {
            tol_f: 1e-12,
            max_iters: 5000,
        };
        let out = fista_minimize(&sp, &st, &DVector::zeros(1), &cfg).unwrap();
        assert!((out.x[0] - 2.5).abs() < 1e-9, "{}", out.x[0]);
        assert!(out.converged);
    }

    #[test]
    fn stationary_start_returns_quickly() {
        let (sp, st) = shifted_scalar(6.0);
        let out = fista_minimize(&sp, &st, &DVector::from_vec(vec![2.5]), &FistaConfig::default()).unwrap();
        assert!(out.iterations <= 2);
        assert!((out.x[0] - 2.5).abs() < 1e-15);
        // 0.5x² + 0.5x² + |x| is stationary at the origin
        let (sp, st) = shifted_scalar(0.0);
        let out = fista_minimize(&sp, &st, &DVector::zeros(1), &FistaConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x[0], 0.0);
        assert_eq!(out.subgradient_inf, 0.0);
    }

    #[test]
    fn objective_never_increases_from_start() {
        let p = ConstrainedL1Problem::new(
            dmatrix![2.0, 0.5; 0.5, 1.0],
            0.3,
            0.1,
            dmatrix![-1.0, 1.0],
            dmatrix![1.0, 1.0],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        let st = SubproblemState {
            shift: DVector::from_vec(vec![1.5, -0.2]),
            lambda: 1.0,
        };
        let x0 = DVector::from_vec(vec![0.7, -0.3, 0.2]);
        let out = fista_minimize(&sp, &st, &x0, &FistaConfig::default()).unwrap();
        assert!(sp.subproblem_objective(&st, &out.x) <= sp.subproblem_objective(&st, &x0));
    }
}

//! Outer Bregman loops: SBSA, SBSA with a forced final acceleration, and plain
//! split Bregman.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StackedProblem, SubproblemState};
use crate::prox::{fista_minimize, FistaConfig};
use crate::subspace::{
    cg_iteration_cap, cg_solve, compute_beta_phi, line_search, partition, restricted_problem, switching_test, Branch,
    GammaState, SpdOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Split Bregman with subspace acceleration.
    Sbsa,
    /// SBSA whose last step is forced to be an acceleration step.
    SbsaLsa,
    /// Plain split Bregman, every subproblem solved by FISTA.
    Sb,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sbsa => "sbsa",
            Mode::SbsaLsa => "sbsa_lsa",
            Mode::Sb => "sb",
        }
    }
}

/// What to do with an accelerated iterate that increased `‖Mx − s‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Safeguard {
    /// Keep it, but solve the next subproblem by FISTA.
    HeuristicAccept,
    /// Discard it and re-solve the current subproblem by FISTA.
    StrictReject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub tol_b: f64,
    pub max_outer: usize,
    pub warmstart_iters: usize,
    pub eta: f64,
    pub gamma0: f64,
    pub fista: FistaConfig,
    pub tol_cg: f64,
    pub mode: Mode,
    pub safeguard: Safeguard,
    /// Keep a per-iteration trace in the report.
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tol_b: 1e-4,
            max_outer: 10_000,
            warmstart_iters: 5,
            eta: 0.1,
            gamma0: 10.0,
            fista: FistaConfig::default(),
            tol_cg: 1e-2,
            mode: Mode::Sbsa,
            safeguard: Safeguard::HeuristicAccept,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("tol_b", self.tol_b),
            ("eta", self.eta),
            ("gamma0", self.gamma0),
            ("tol_f", self.fista.tol_f),
            ("tol_cg", self.tol_cg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.eta >= 1.0 {
            return Err(Error::InvalidConfig(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.max_outer == 0 || self.fista.max_iters == 0 {
            return Err(Error::InvalidConfig("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxOuter,
    NumericalError,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxOuter => "max_outer",
            Termination::NumericalError => "numerical_error",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerIterations {
    pub fista: usize,
    pub cg: usize,
}

/// How an outer iterate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Fista,
    Accelerated,
    /// Accelerated iterate kept although `‖Mx − s‖` grew.
    AcceleratedFlagged,
    /// Accelerated iterate discarded, subproblem re-solved by FISTA.
    AcceleratedRejected,
    /// Acceleration attempted but the line search failed; FISTA fallback.
    AccelerationFailed,
    Admm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖Mx^k − s‖`.
    pub residual: f64,
    pub violation_a: f64,
    pub violation_d: f64,
    /// `H^{k−1}(x^k)`, the subproblem objective the iterate was computed for.
    pub subproblem_value: f64,
    pub gamma: f64,
    pub step: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    /// Final stacked iterate `[u; d]`.
    pub x_final: Vec<f64>,
    /// Multiplier estimate `μ` for `Mx = s` paired with `x_final`.
    pub multiplier: Vec<f64>,
    pub outer_iters: usize,
    pub accel_steps_taken: usize,
    pub accel_steps_rejected: usize,
    pub inner: InnerIterations,
    pub termination: Termination,
    pub violation_a: f64,
    pub violation_d: f64,
    pub objective: f64,
    pub wall_time: f64,
    pub trace: Option<Vec<IterationRecord>>,
}

impl SolveReport {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.x_final)
    }

    pub fn u(&self, n: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.x_final[..n])
    }

    pub fn multiplier_vec(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.multiplier)
    }
}

/// Outcome of the acceptance test for an accelerated iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafeguardVerdict {
    Accept,
    /// Accepted, but the next subproblem must be solved by FISTA.
    AcceptForceFista,
    Reject,
}

/// Accept when `‖Mx_cand − s‖ ≤ ‖Mx_prev − s‖`; otherwise follow `policy`.
pub fn safeguard(
    sp: &StackedProblem,
    x_prev: &DVector<f64>,
    x_candidate: &DVector<f64>,
    policy: Safeguard,
) -> SafeguardVerdict {
    safeguard_from_residuals(sp.residual_norm(x_prev), sp.residual_norm(x_candidate), policy)
}

pub fn safeguard_from_residuals(prev: f64, candidate: f64, policy: Safeguard) -> SafeguardVerdict {
    if candidate <= prev {
        SafeguardVerdict::Accept
    } else {
        match policy {
            Safeguard::HeuristicAccept => SafeguardVerdict::AcceptForceFista,
            Safeguard::StrictReject => SafeguardVerdict::Reject,
        }
    }
}

struct AccelerationStep {
    x: DVector<f64>,
    cg_iters: usize,
}

/// Restricted CG solve on the face of `x` followed by the projected line search.
fn acceleration_step(
    sp: &StackedProblem,
    state: &SubproblemState,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<AccelerationStep> {
    let part = partition(x);
    let reduced = restricted_problem(sp, state, &part, x)?;
    let start = reduced.restrict(x);
    let cap = cg_iteration_cap(reduced.dim());
    let cg = cg_solve(&reduced, &reduced.rhs(), &start, cfg.tol_cg, cap)?;
    let z = reduced.embed(&cg.solution);
    let ls = line_search(sp, state, x, &z, cfg.eta)?;
    Ok(AccelerationStep {
        x: ls.x,
        cg_iters: cg.iterations,
    })
}

/// Runs the configured Bregman variant from `x⁰ = 0`, `s⁰ = 0`.
///
/// Invalid configurations are reported as errors; failures inside the loop end
/// the run with [`Termination::NumericalError`] and the last finite iterate.
pub fn solve(sp: &StackedProblem, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut state = SubproblemState::initial(sp, cfg.lambda);
    let mut gamma = GammaState::new(cfg.gamma0)?;
    let mut inner = InnerIterations::default();
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut accel_taken = 0;
    let mut accel_rejected = 0;

    let finish = |x: DVector<f64>,
                  state: &SubproblemState,
                  outer_iters: usize,
                  termination: Termination,
                  inner: InnerIterations,
                  accel: (usize, usize),
                  trace: Option<Vec<IterationRecord>>| {
        // pair x^k with μ^k = λ(s^k − s), s^k = s^{k−1} + s − Mx^k
        let mut paired = state.clone();
        paired.advance(sp, &x);
        let (va, vd) = sp.violations(&x);
        SolveReport {
            solver: cfg.mode.name().to_string(),
            objective: sp.original_objective(&x),
            multiplier: paired.multiplier(sp).as_slice().to_vec(),
            x_final: x.as_slice().to_vec(),
            outer_iters,
            accel_steps_taken: accel.0,
            accel_steps_rejected: accel.1,
            inner,
            termination,
            violation_a: va,
            violation_d: vd,
            wall_time: started.elapsed().as_secs_f64(),
            trace,
        }
    };

    // x¹ ≈ argmin H⁰
    let x0 = DVector::zeros(sp.n_x());
    let mut x = match fista_minimize(sp, &state, &x0, &cfg.fista) {
        Ok(out) => {
            inner.fista += out.iterations;
            out.x
        }
        Err(_) => {
            return Ok(finish(x0, &state, 0, Termination::NumericalError, inner, (0, 0), trace));
        }
    };
    let mut last_step = StepKind::Fista;
    let mut force_fista = false;
    let mut k = 1;

    loop {
        // `state` still holds s^{k−1}; the record pairs x^k with H^{k−1}.
        let (va, vd) = sp.violations(&x);
        if let Some(t) = trace.as_mut() {
            t.push(IterationRecord {
                k,
                residual: sp.residual_norm(&x),
                violation_a: va,
                violation_d: vd,
                subproblem_value: sp.subproblem_objective(&state, &x),
                gamma: gamma.gamma,
                step: last_step,
            });
        }

        if va <= cfg.tol_b && vd <= cfg.tol_b {
            let mut outer = k;
            let ends_with_acceleration = matches!(last_step, StepKind::Accelerated | StepKind::AcceleratedFlagged);
            if cfg.mode == Mode::SbsaLsa && !ends_with_acceleration && !partition(&x).nonzero().is_empty() {
                let mut next = state.clone();
                next.advance(sp, &x);
                if let Ok(step) = acceleration_step(sp, &next, &x, cfg) {
                    let (va2, vd2) = sp.violations(&step.x);
                    inner.cg += step.cg_iters;
                    // the polished point must still pass the stopping test
                    if va2 <= cfg.tol_b && vd2 <= cfg.tol_b {
                        accel_taken += 1;
                        outer += 1;
                        return Ok(finish(
                            step.x,
                            &next,
                            outer,
                            Termination::Converged,
                            inner,
                            (accel_taken, accel_rejected),
                            trace,
                        ));
                    }
                }
            }
            return Ok(finish(
                x,
                &state,
                outer,
                Termination::Converged,
                inner,
                (accel_taken, accel_rejected),
                trace,
            ));
        }
        if k >= cfg.max_outer {
            return Ok(finish(
                x,
                &state,
                k,
                Termination::MaxOuter,
                inner,
                (accel_taken, accel_rejected),
                trace,
            ));
        }

        let prev_state = state.clone();
        state.advance(sp, &x);

        let mut branch = Branch::Standard;
        if cfg.mode != Mode::Sb && k > cfg.warmstart_iters && !force_fista {
            match sp.smooth_value_grad(&state, &x).and_then(|(_, g)| compute_beta_phi(&g, sp.delta(), &x)) {
                Ok(meas) => {
                    branch = switching_test(&meas, &mut gamma);
                }
                Err(_) => {
                    return Ok(finish(
                        x,
                        &prev_state,
                        k,
                        Termination::NumericalError,
                        inner,
                        (accel_taken, accel_rejected),
                        trace,
                    ));
                }
            }
        }
        force_fista = false;

        let mut next: Option<DVector<f64>> = None;
        if branch == Branch::Accelerate && !partition(&x).nonzero().is_empty() {
            match acceleration_step(sp, &state, &x, cfg) {
                Ok(step) => {
                    inner.cg += step.cg_iters;
                    match safeguard(sp, &x, &step.x, cfg.safeguard) {
                        SafeguardVerdict::Accept => {
                            accel_taken += 1;
                            last_step = StepKind::Accelerated;
                            next = Some(step.x);
                        }
                        SafeguardVerdict::AcceptForceFista => {
                            accel_taken += 1;
                            force_fista = true;
                            last_step = StepKind::AcceleratedFlagged;
                            next = Some(step.x);
                        }
                        SafeguardVerdict::Reject => {
                            accel_rejected += 1;
                            last_step = StepKind::AcceleratedRejected;
                        }
                    }
                }
                Err(Error::LineSearchFailed(_)) => {
                    last_step = StepKind::AccelerationFailed;
                }
                Err(_) => {
                    return Ok(finish(
                        x,
                        &prev_state,
                        k,
                        Termination::NumericalError,
                        inner,
                        (accel_taken, accel_rejected),
                        trace,
                    ));
                }
            }
        } else {
            last_step = StepKind::Fista;
        }

        let x_next = match next {
            Some(v) => v,
            None => match fista_minimize(sp, &state, &x, &cfg.fista) {
                Ok(out) => {
                    inner.fista += out.iterations;
                    out.x
                }
                Err(_) => {
                    return Ok(finish(
                        x,
                        &prev_state,
                        k,
                        Termination::NumericalError,
                        inner,
                        (accel_taken, accel_rejected),
                        trace,
                    ));
                }
            },
        };
        x = x_next;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stack, ConstrainedL1Problem};
    use nalgebra::{dmatrix, DMatrix};

    #[test]
    fn default_config_constants() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.tol_b, 1e-4);
        assert_eq!(cfg.max_outer, 10_000);
        assert_eq!(cfg.warmstart_iters, 5);
        assert_eq!(cfg.eta, 0.1);
        assert_eq!(cfg.gamma0, 10.0);
        assert_eq!(cfg.tol_cg, 1e-2);
        assert_eq!(cfg.fista.tol_f, 1e-5);
        assert_eq!(cfg.fista.max_iters, 5000);
        assert!(cfg.validate().is_ok());
        let bad = SolverConfig {
            tol_b: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn safeguard_policies() {
        use SafeguardVerdict::*;
        assert_eq!(safeguard_from_residuals(0.5, 0.4, Safeguard::StrictReject), Accept);
        assert_eq!(safeguard_from_residuals(0.5, 0.4, Safeguard::HeuristicAccept), Accept);
        assert_eq!(safeguard_from_residuals(0.5, 0.6, Safeguard::StrictReject), Reject);
        assert_eq!(safeguard_from_residuals(0.5, 0.6, Safeguard::HeuristicAccept), AcceptForceFista);
    }

    #[test]
    fn zero_problem_converges_immediately() {
        let p = ConstrainedL1Problem::new(
            dmatrix![2.0, 0.3; 0.3, 1.0],
            0.1,
            0.1,
            dmatrix![-1.0, 1.0],
            dmatrix![1.0, 1.0],
            DVector::zeros(1),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        for mode in [Mode::Sbsa, Mode::SbsaLsa, Mode::Sb] {
            let r = solve(&sp, &SolverConfig::with_mode(mode)).unwrap();
            assert_eq!(r.termination, Termination::Converged);
            assert_eq!(r.outer_iters, 1);
            assert_eq!(r.accel_steps_taken, 0);
            assert!(r.x_final.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn max_outer_is_reported() {
        let p = ConstrainedL1Problem::new(
            DMatrix::identity(2, 2),
            0.01,
            0.0,
            DMatrix::zeros(0, 2),
            dmatrix![1.0, 1.0],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let sp = stack(&p).unwrap();
        let cfg = SolverConfig {
            max_outer: 2,
            tol_b: 1e-14,
            ..SolverConfig::with_mode(Mode::Sb)
        };
        let r = solve(&sp, &cfg).unwrap();
        assert_eq!(r.termination, Termination::MaxOuter);
        assert_eq!(r.outer_iters, 2);
    }
}

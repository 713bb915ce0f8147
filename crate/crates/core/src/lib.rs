//! Split Bregman solvers with orthant-face subspace acceleration for
//!
//! ```text
//! min uᵀCu + τ1‖u‖₁ + τ2‖Du‖₁   s.t.  Au = b
//! ```
//!
//! plus an ADMM baseline, a brute-force oracle for tiny instances and the
//! multi-period fused-lasso portfolio application.

pub mod admm;
pub mod cli;
pub mod driver;
pub mod error;
pub mod io;
mod linalg;
pub mod model;
pub mod oracle;
pub mod portfolio;
pub mod prox;
pub mod subspace;
pub mod synth;

pub use admm::{admm_solve, admm_solve_stacked, AdmmConfig, AdmmState};
pub use driver::{solve, Mode, Safeguard, SolveReport, SolverConfig, Termination};
pub use error::{Error, Result};
pub use model::{stack, ConstrainedL1Problem, StackedProblem, SubproblemState};
pub use oracle::{enumerate_solve, OracleSolution};
pub use portfolio::{build_model, compute_metrics, estimate_moments, naive_wealth, PortfolioMetrics, PortfolioModel, ReturnPanel};
pub use prox::{fista_minimize, soft_threshold, FistaConfig};

//! Aggregation of site summaries under the mixture penalty.

mod bundle;
pub mod prox;
mod solver;

pub use bundle::{CoefficientBundle, GammaSchedule, PenaltyConfig, LAMBDA_G_MULTIPLIERS};
pub(crate) use solver::Problem;
pub use solver::{
    kkt_residual, lambda_critical, lambda_g_upper_bound, null_bundle, shir_objective, solve_shir,
    solve_shir_with, SolveOutcome, SolverOptions,
};

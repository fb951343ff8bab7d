//! Integrative sparse regression across sites that may only release summary
//! statistics.
//!
//! Each site fits a cross-validated LASSO and releases `(n, Ĥ, ĝ)`: the loss
//! Hessian at its fit and `Ĥβ̂ − ∇L̂(β̂)`. The aggregator minimizes a quadratic
//! surrogate of the pooled loss under a mixture penalty that separates shared
//! effects `μ` from site deviations `α⁽ᵐ⁾` (with `Σₘ α⁽ᵐ⁾ = 0`), and tunes the
//! penalty by a generalized information criterion.

pub mod aggregator;
pub mod baselines;
pub mod error;
pub mod glm;
pub mod local;
pub mod sim;
pub mod transport;
pub mod tuning;

pub use aggregator::{
    kkt_residual, shir_objective, solve_shir, CoefficientBundle, GammaSchedule, PenaltyConfig,
};
pub use error::{Result, ShirError};
pub use glm::{empirical_loss, gradient, hessian, LossFamily, StudyData};
pub use local::{cross_validate_lambda, fit_local_lasso, summarize, LocalFit, LocalSummary};
pub use tuning::{degrees_of_freedom, deviance, select_by_gic, GicResult};

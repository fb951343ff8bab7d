//! Site-side fitting: cross-validated LASSO and the released summary.

pub mod cv;
pub mod lasso;
pub mod summary;

pub use cv::{cross_validate_lambda, LocalFit, DEFAULT_FOLDS, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO};
pub use lasso::{
    default_lambda_grid, fit_local_lasso, fit_local_lasso_with, lambda_max, local_kkt_residual,
    LassoOptions, LassoOutcome,
};
pub use summary::{summarize, LocalSummary, SCHEMA_VERSION};

use std::io;

use thiserror::Error;

use crate::transport::envelope::EnvelopeError;

pub type Result<T, E = ShirError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ShirError {
    /// Caller broke a shape precondition (matrix/vector sizes disagree).
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value while evaluating {context} at observation {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("{solver} did not converge after {iterations} iterations (KKT residual {kkt:.3e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        kkt: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fold {fold} has a single response class after resampling")]
    DegenerateFold { fold: usize },

    #[error("column {column} is degenerate (zero residual variance)")]
    DegenerateColumn { column: usize },

    #[error("site {site}: {reason}")]
    SiteMismatch { site: String, reason: String },

    #[error("duplicate site id {0:?}")]
    DuplicateSite(String),

    #[error("site {site}: {source}")]
    Site {
        site: String,
        #[source]
        source: Box<ShirError>,
    },

    #[error("site {site} unreachable: {message}")]
    Unreachable { site: String, message: String },

    #[error("no grid point converged ({failures} failures)")]
    AllGridPointsFailed { failures: usize },

    #[error(transparent)]
    Envelope(#[from] EnvelopeError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl ShirError {
    pub fn at_site(self, site: impl Into<String>) -> Self {
        ShirError::Site {
            site: site.into(),
            source: Box::new(self),
        }
    }

    /// Whether retrying the same operation may succeed (transport failures only).
    pub fn is_retriable(&self) -> bool {
        match self {
            ShirError::Unreachable { .. } => true,
            ShirError::Site { source, .. } => source.is_retriable(),
            _ => false,
        }
    }

    /// Innermost error, skipping site wrappers.
    pub fn root(&self) -> &ShirError {
        match self {
            ShirError::Site { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_convergence(&self) -> bool {
        matches!(self.root(), ShirError::Convergence { .. })
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ShirError::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

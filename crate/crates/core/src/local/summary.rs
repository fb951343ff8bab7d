use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, ShirError};
use crate::glm::{gradient, hessian, LossFamily, StudyData};
use crate::local::cv::LocalFit;

pub const SCHEMA_VERSION: u16 = 1;

/// The only payload a site releases: `(n, Ĥ, ĝ)` plus provenance.
///
/// `h` is the loss Hessian at the site's LASSO fit and `g = h·β̂ − ∇L̂(β̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSummary {
    pub site_id: String,
    pub n: u64,
    pub p: usize,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub family: LossFamily,
    pub lambda_m: f64,
    pub schema_version: u16,
}

impl LocalSummary {
    /// Checks shape, finiteness and symmetry of `h`.
    pub fn validate(&self) -> Result<()> {
        check_dim("summary Hessian rows", self.p, self.h.nrows())?;
        check_dim("summary Hessian columns", self.p, self.h.ncols())?;
        check_dim("summary g length", self.p, self.g.len())?;
        let bad = |what: &str| ShirError::SiteMismatch {
            site: self.site_id.clone(),
            reason: what.to_string(),
        };
        if self.n == 0 {
            return Err(bad("zero observations"));
        }
        if self.h.iter().chain(self.g.iter()).any(|v| !v.is_finite()) || !self.lambda_m.is_finite() {
            return Err(bad("non-finite summary entry"));
        }
        for j in 0..self.p {
            for k in (j + 1)..self.p {
                if self.h[(j, k)] != self.h[(k, j)] {
                    return Err(bad("Hessian is not symmetric"));
                }
            }
        }
        Ok(())
    }
}

/// Builds the released summary from the site's own fit.
pub fn summarize(data: &StudyData, fit: &LocalFit, family: LossFamily) -> Result<LocalSummary> {
    check_dim("fit coefficient length", data.p(), fit.beta.len())?;
    let h = hessian(data, &fit.beta, family)?;
    let grad = gradient(data, &fit.beta, family)?;
    let g = &h * &fit.beta - grad;
    Ok(LocalSummary {
        site_id: data.site_id().to_string(),
        n: data.n() as u64,
        p: data.p(),
        h,
        g,
        family,
        lambda_m: fit.lambda_m,
        schema_version: SCHEMA_VERSION,
    })
}

/// Summary expanded at an arbitrary coefficient vector (used by the pooled fit).
pub(crate) fn expand_at(
    data: &StudyData,
    beta: &DVector<f64>,
    family: LossFamily,
) -> Result<LocalSummary> {
    summarize(data, &LocalFit::fixed(beta.clone(), 0.0), family)
}

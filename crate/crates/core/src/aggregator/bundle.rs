use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShirError};

/// Scaling `γ_N` applied to the degrees of freedom in the information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaSchedule {
    /// `2/N`
    Aic,
    /// `log N / N`
    #[default]
    Bic,
    /// `log log p · log N / N`
    Mbic,
    /// `2 log p / N`
    Ric,
}

impl GammaSchedule {
    pub fn gamma(self, n_total: u64, p: usize) -> f64 {
        let n = n_total as f64;
        let p = p as f64;
        match self {
            GammaSchedule::Aic => 2.0 / n,
            GammaSchedule::Bic => n.ln() / n,
            GammaSchedule::Mbic => p.ln().ln() * n.ln() / n,
            GammaSchedule::Ric => 2.0 * p.ln() / n,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Some(Self::Aic),
            "bic" => Some(Self::Bic),
            "mbic" => Some(Self::Mbic),
            "ric" => Some(Self::Ric),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Aic => "aic",
            Self::Bic => "bic",
            Self::Mbic => "mbic",
            Self::Ric => "ric",
        }
    }
}

/// Tuning state of the mixture penalty `λ(‖μ₋₁‖₁ + λ_g Σⱼ ‖αⱼ‖₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub lambda_g: f64,
    pub schedule: GammaSchedule,
}

/// Multipliers of `M^{-1/2}` tried for `λ_g`.
pub const LAMBDA_G_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

impl PenaltyConfig {
    pub fn new(lambda: f64, lambda_g: f64) -> Self {
        Self {
            lambda,
            lambda_g,
            schedule: GammaSchedule::default(),
        }
    }

    /// `λ_g = M^{-1/2}`.
    pub fn default_lambda_g(sites: usize) -> f64 {
        1.0 / (sites as f64).sqrt()
    }

    pub fn lambda_g_grid(sites: usize) -> Vec<f64> {
        let base = Self::default_lambda_g(sites);
        LAMBDA_G_MULTIPLIERS.iter().map(|m| m * base).collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.lambda_g >= 0.0) || self.lambda.is_nan() {
            return Err(ShirError::InvalidInput(format!(
                "penalties must be nonnegative, got lambda = {}, lambda_g = {}",
                self.lambda, self.lambda_g
            )));
        }
        Ok(())
    }
}

/// Shared effects `μ`, site deviations `α` (rows) and `β⁽ᵐ⁾ = μ + α⁽ᵐ⁾`.
///
/// Column 0 is the intercept. Active sets list penalized columns only.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBundle {
    mu: DVector<f64>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    active_mu: Vec<usize>,
    active_alpha: Vec<usize>,
}

impl CoefficientBundle {
    pub fn zeros(sites: usize, p: usize) -> Self {
        Self::from_parts(DVector::zeros(p), DMatrix::zeros(sites, p)).expect("shapes agree")
    }

    /// `alpha` is `M × p`; its columns are expected to sum to zero.
    pub fn from_parts(mu: DVector<f64>, alpha: DMatrix<f64>) -> Result<Self> {
        check_dim("alpha columns", mu.len(), alpha.ncols())?;
        let (m, p) = alpha.shape();
        let beta = DMatrix::from_fn(m, p, |s, j| mu[j] + alpha[(s, j)]);
        let active_mu = (1..p).filter(|&j| mu[j] != 0.0).collect();
        let active_alpha = (1..p)
            .filter(|&j| alpha.column(j).iter().any(|&v| v != 0.0))
            .collect();
        Ok(Self {
            mu,
            alpha,
            beta,
            active_mu,
            active_alpha,
        })
    }

    /// Decomposes per-site coefficients as `μ = mean β⁽ᵐ⁾`, `α⁽ᵐ⁾ = β⁽ᵐ⁾ − μ`.
    pub fn from_site_betas(betas: &[DVector<f64>]) -> Result<Self> {
        let m = betas.len();
        if m == 0 {
            return Err(ShirError::InvalidInput("no site coefficients".into()));
        }
        let p = betas[0].len();
        for b in betas {
            check_dim("site coefficient length", p, b.len())?;
        }
        let mu = DVector::from_fn(p, |j, _| betas.iter().map(|b| b[j]).sum::<f64>() / m as f64);
        let alpha = DMatrix::from_fn(m, p, |s, j| betas[s][j] - mu[j]);
        Self::from_parts(mu, alpha)
    }

    pub fn num_sites(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn site_beta(&self, site: usize) -> DVector<f64> {
        self.beta.row(site).transpose()
    }

    pub fn active_mu(&self) -> &[usize] {
        &self.active_mu
    }

    pub fn active_alpha(&self) -> &[usize] {
        &self.active_alpha
    }

    /// Same coefficients with site rows reordered: row `k` of the result is row `order[k]`.
    pub fn permute_sites(&self, order: &[usize]) -> Self {
        let alpha = self.alpha.select_rows(order);
        Self::from_parts(self.mu.clone(), alpha).expect("shape preserved")
    }
}

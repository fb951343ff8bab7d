//! Loss families and per-site empirical loss, gradient and Hessian.
//!
//! Every site works with the mean loss `n⁻¹ Σ f(βᵀxᵢ, yᵢ)` where `f` is either
//! the squared error `(y − a)²` or the logistic negative log-likelihood
//! `−y·a + log(1 + eᵃ)`. The first design column is the intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, ShirError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    SquaredError,
    Logistic,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::SquaredError => "squared-error",
            LossFamily::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squared-error" | "squared" | "gaussian" | "linear" => Some(LossFamily::SquaredError),
            "logistic" | "binomial" => Some(LossFamily::Logistic),
            _ => None,
        }
    }

    /// `f(a, y)`.
    #[inline]
    pub fn loss(self, a: f64, y: f64) -> f64 {
        match self {
            LossFamily::SquaredError => (y - a) * (y - a),
            LossFamily::Logistic => softplus(a) - y * a,
        }
    }

    /// `∂f/∂a`.
    #[inline]
    pub fn d1(self, a: f64, y: f64) -> f64 {
        match self {
            LossFamily::SquaredError => -2.0 * (y - a),
            LossFamily::Logistic => sigmoid(a) - y,
        }
    }

    /// `∂²f/∂a²`.
    #[inline]
    pub fn d2(self, a: f64, _y: f64) -> f64 {
        match self {
            LossFamily::SquaredError => 2.0,
            LossFamily::Logistic => {
                let e = (-a.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }
}

/// `log(1 + eᵃ)` without overflow.
#[inline]
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// One site's raw design and response. Never leaves the site.
#[derive(Debug, Clone)]
pub struct StudyData {
    site_id: String,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl StudyData {
    /// `x` must already carry the all-ones intercept as its first column.
    pub fn new(site_id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let site_id = site_id.into();
        let (n, p) = x.shape();
        check_dim("StudyData response length", n, y.len())?;
        if n == 0 || p < 2 {
            return Err(ShirError::InvalidInput(format!(
                "site {site_id}: need n >= 1 and p >= 2, got n = {n}, p = {p}"
            )));
        }
        if let Some(i) = x.column(0).iter().position(|&v| v != 1.0) {
            return Err(ShirError::InvalidInput(format!(
                "site {site_id}: first design column must be the intercept (row {i} is not 1)"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ShirError::InvalidInput(format!(
                "site {site_id}: non-finite design entry at row {}, column {}",
                i % n,
                i / n
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ShirError::InvalidInput(format!(
                "site {site_id}: non-finite response at row {i}"
            )));
        }
        Ok(Self { site_id, x, y })
    }

    /// Prepends the intercept column to an `n × (p − 1)` covariate matrix.
    pub fn from_covariates(
        site_id: impl Into<String>,
        covariates: &DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let x = DMatrix::from_fn(n, covariates.ncols() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                covariates[(i, j - 1)]
            }
        });
        Self::new(site_id, x, y)
    }

    /// Rejects responses outside `{0, 1}` for the logistic family.
    pub fn validate_for(&self, family: LossFamily) -> Result<()> {
        if family == LossFamily::Logistic {
            if let Some(i) = self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(ShirError::InvalidInput(format!(
                    "site {}: logistic response must be 0/1, row {i} is {}",
                    self.site_id, self.y[i]
                )));
            }
        }
        Ok(())
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Self::new(self.site_id.clone(), x, y)
    }
}

fn linear_predictor(data: &StudyData, beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("coefficient length", data.p(), beta.len())?;
    let eta = data.x() * beta;
    if let Some(i) = eta.iter().position(|v| !v.is_finite()) {
        return Err(ShirError::NonFinite {
            context: "linear predictor",
            index: i,
        });
    }
    Ok(eta)
}

/// `n⁻¹ Σᵢ f(βᵀxᵢ, yᵢ)`.
pub fn empirical_loss(data: &StudyData, beta: &DVector<f64>, family: LossFamily) -> Result<f64> {
    let eta = linear_predictor(data, beta)?;
    let mut total = 0.0;
    for (i, (&a, &y)) in eta.iter().zip(data.y().iter()).enumerate() {
        let l = family.loss(a, y);
        if !l.is_finite() {
            return Err(ShirError::NonFinite {
                context: "loss",
                index: i,
            });
        }
        total += l;
    }
    Ok(total / data.n() as f64)
}

/// `n⁻¹ Σᵢ f′(βᵀxᵢ, yᵢ) xᵢ`.
pub fn gradient(data: &StudyData, beta: &DVector<f64>, family: LossFamily) -> Result<DVector<f64>> {
    let eta = linear_predictor(data, beta)?;
    let d1 = DVector::from_iterator(
        data.n(),
        eta.iter().zip(data.y().iter()).map(|(&a, &y)| family.d1(a, y)),
    );
    if let Some(i) = d1.iter().position(|v| !v.is_finite()) {
        return Err(ShirError::NonFinite {
            context: "gradient",
            index: i,
        });
    }
    Ok(data.x().tr_mul(&d1) / data.n() as f64)
}

/// `n⁻¹ Σᵢ f″(βᵀxᵢ, yᵢ) xᵢxᵢᵀ`; the upper triangle is computed and mirrored.
pub fn hessian(data: &StudyData, beta: &DVector<f64>, family: LossFamily) -> Result<DMatrix<f64>> {
    let eta = linear_predictor(data, beta)?;
    let weights: Vec<f64> = eta
        .iter()
        .zip(data.y().iter())
        .map(|(&a, &y)| family.d2(a, y))
        .collect();
    Ok(weighted_gram(data.x(), &weights))
}

/// `n⁻¹ Xᵀ diag(w) X`, exactly symmetric.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut wx = x.clone();
    for mut col in wx.column_iter_mut() {
        for (v, &w) in col.iter_mut().zip(weights) {
            *v *= w;
        }
    }
    let mut h = x.tr_mul(&wx) / n as f64;
    mirror_upper(&mut h);
    h
}

/// Copies the upper triangle onto the lower one.
pub(crate) fn mirror_upper(h: &mut DMatrix<f64>) {
    let p = h.nrows();
    for j in 0..p {
        for i in (j + 1)..p {
            h[(i, j)] = h[(j, i)];
        }
    }
}

//! Sparse meta-analysis: marginal screening, per-site unpenalized fits, then
//! an inverse-variance weighted quadratic with the hierarchical penalty
//! `Σ_{j≥2} ‖β_j‖₁^{1/2}` (across sites), handled by local linear approximation.

use nalgebra::{DMatrix, DVector};

use crate::aggregator::prox::soft;
use crate::aggregator::{CoefficientBundle, GammaSchedule};
use crate::baselines::ipd::check_studies;
use crate::error::{Result, ShirError};
use crate::glm::{gradient, hessian, LossFamily, StudyData};
use crate::local::lasso::log_grid;

#[derive(Debug, Clone)]
pub struct SmaOptions {
    /// Covariates kept after screening; `None` means `⌊n/(3 ln n)⌋` with `n = min nₘ`.
    pub screen_dim: Option<usize>,
    pub lla_rounds: usize,
    /// Smoothing in `(‖β_j‖₁ + ε)^{1/2}`.
    pub epsilon: f64,
    pub grid_len: usize,
    pub grid_ratio: f64,
}

impl Default for SmaOptions {
    fn default() -> Self {
        Self {
            screen_dim: None,
            lla_rounds: 5,
            epsilon: 1e-8,
            grid_len: 30,
            grid_ratio: 1e-3,
        }
    }
}

pub fn default_screen_dim(n: usize) -> usize {
    let n = n as f64;
    (n / (3.0 * n.ln())).floor() as usize
}

fn abs_correlation(x: &DMatrix<f64>, y: &DVector<f64>, j: usize) -> f64 {
    let n = y.len() as f64;
    let col = x.column(j);
    let (mx, my) = (col.sum() / n, y.sum() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..y.len() {
        let (a, b) = (col[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).abs()
    }
}

/// Covariate columns (design indices ≥ 1) ranked by the across-site mean of
/// the absolute marginal correlation with the response; the top `keep`, sorted.
pub fn screen_covariates(studies: &[StudyData], keep: usize) -> Vec<usize> {
    let p = studies[0].p();
    let mut score: Vec<(usize, f64)> = (1..p)
        .map(|j| {
            let s: f64 = studies.iter().map(|d| abs_correlation(d.x(), d.y(), j)).sum();
            (j, s / studies.len() as f64)
        })
        .collect();
    // Stable sort keeps the lower index first among equal scores.
    score.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut kept: Vec<usize> = score.into_iter().take(keep).map(|(j, _)| j).collect();
    kept.sort_unstable();
    kept
}

/// Unpenalized fit on the selected columns by damped Newton.
fn unpenalized_fit(data: &StudyData, family: LossFamily) -> Result<DVector<f64>> {
    let p = data.p();
    let mut beta = DVector::zeros(p);
    let loss = |b: &DVector<f64>| crate::glm::empirical_loss(data, b, family);
    let mut f = loss(&beta)?;
    for _ in 0..100 {
        let g = gradient(data, &beta, family)?;
        if g.amax() < 1e-10 {
            return Ok(beta);
        }
        let h = hessian(data, &beta, family)?;
        let step = h
            .cholesky()
            .ok_or_else(|| ShirError::Singular("screened design Hessian".into()))?
            .solve(&g);
        // Newton decrement: below this the line search only sees rounding.
        if g.dot(&step) < 1e-15 * f.abs().max(1.0) {
            return Ok(&beta - step);
        }
        let mut t = 1.0;
        loop {
            let trial = &beta - &step * t;
            let ft = loss(&trial)?;
            if ft <= f {
                beta = trial;
                f = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Ok(beta);
            }
        }
        if beta.amax() > 1e6 {
            break;
        }
    }
    Err(ShirError::Convergence {
        solver: "screened maximum likelihood (possible separation)",
        iterations: 100,
        kkt: f64::NAN,
    })
}

/// Per-site ingredients on the screened columns.
struct SiteMle {
    beta: DVector<f64>,
    /// `(nₘ/N)·H̆ₘ`: the inverse-variance weight on the `N⁻¹` scale.
    weight: DMatrix<f64>,
}

pub struct SmaPrepared {
    columns: Vec<usize>,
    sites: Vec<SiteMle>,
    p: usize,
    n_total: usize,
}

impl SmaPrepared {
    pub fn new(studies: &[StudyData], family: LossFamily, opts: &SmaOptions) -> Result<Self> {
        let p = check_studies(studies, family)?;
        let n_min = studies.iter().map(|s| s.n()).min().expect("nonempty");
        let keep = opts.screen_dim.unwrap_or_else(|| default_screen_dim(n_min)).min(p - 1);
        if keep + 1 >= n_min {
            return Err(ShirError::InvalidInput(format!(
                "screened dimension {keep} is not below the smallest site size {n_min}"
            )));
        }
        let mut columns = vec![0];
        columns.extend(screen_covariates(studies, keep));
        let n_total: usize = studies.iter().map(|s| s.n()).sum();
        let mut sites = Vec::with_capacity(studies.len());
        for s in studies {
            let sub = StudyData::new(s.site_id(), s.x().select_columns(&columns), s.y().clone())?;
            let beta = unpenalized_fit(&sub, family).map_err(|e| e.at_site(s.site_id()))?;
            let h = hessian(&sub, &beta, family)?;
            let weight = h * (s.n() as f64 / n_total as f64);
            sites.push(SiteMle { beta, weight });
        }
        Ok(Self {
            columns,
            sites,
            p,
            n_total,
        })
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// `Σₘ (βₘ − β̆ₘ)ᵀ Wₘ (βₘ − β̆ₘ)` on the screened coordinates.
    fn deviance(&self, betas: &[DVector<f64>]) -> f64 {
        self.sites
            .iter()
            .zip(betas)
            .map(|(s, b)| {
                let d = b - &s.beta;
                d.dot(&(&s.weight * &d))
            })
            .sum()
    }

    fn objective(&self, betas: &[DVector<f64>], lambda: f64) -> f64 {
        let q = self.columns.len();
        let pen: f64 = (1..q)
            .map(|j| betas.iter().map(|b| b[j].abs()).sum::<f64>().sqrt())
            .sum();
        self.deviance(betas) + lambda * pen
    }

    /// Largest `λ` for which the first reweighted round keeps anything.
    fn lambda_top(&self, eps: f64) -> f64 {
        let q = self.columns.len();
        let omega = self.lla_weights(&self.mle_betas(), eps);
        let mut top: f64 = 0.0;
        for s in &self.sites {
            let grad = &s.weight * &s.beta * 2.0;
            for j in 1..q {
                top = top.max(grad[j].abs() / omega[j]);
            }
        }
        top
    }

    fn mle_betas(&self) -> Vec<DVector<f64>> {
        self.sites.iter().map(|s| s.beta.clone()).collect()
    }

    fn lla_weights(&self, betas: &[DVector<f64>], eps: f64) -> Vec<f64> {
        let q = self.columns.len();
        (0..q)
            .map(|j| {
                if j == 0 {
                    0.0
                } else {
                    0.5 / (betas.iter().map(|b| b[j].abs()).sum::<f64>() + eps).sqrt()
                }
            })
            .collect()
    }

    /// One weighted-LASSO solve per site: `(β − β̆)ᵀW(β − β̆) + λ Σⱼ ωⱼ|βⱼ|`.
    fn weighted_lasso(&self, site: &SiteMle, start: &DVector<f64>, omega: &[f64], lambda: f64) -> Result<DVector<f64>> {
        let q = self.columns.len();
        let mut beta = start.clone();
        // grad = 2W(β − β̆)
        let mut grad = &site.weight * (&beta - &site.beta) * 2.0;
        for _ in 0..100_000 {
            let mut change: f64 = 0.0;
            for j in 0..q {
                let a = 2.0 * site.weight[(j, j)];
                if a <= 0.0 {
                    continue;
                }
                let z = a * beta[j] - grad[j];
                let new = if j == 0 { z / a } else { soft(z, lambda * omega[j]) / a };
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    grad.axpy(2.0 * delta, &site.weight.column(j), 1.0);
                    change = change.max(delta.abs());
                }
            }
            if change < 1e-12 {
                return Ok(beta);
            }
        }
        Err(ShirError::Convergence {
            solver: "meta-analysis weighted LASSO",
            iterations: 100_000,
            kkt: f64::NAN,
        })
    }

    /// Screened-coordinate site coefficients after the LLA rounds.
    fn solve_screened(&self, lambda: f64, opts: &SmaOptions) -> Result<Vec<DVector<f64>>> {
        let mut betas = self.mle_betas();
        if lambda == 0.0 {
            return Ok(betas);
        }
        for _ in 0..opts.lla_rounds {
            let omega = self.lla_weights(&betas, opts.epsilon);
            let next = self
                .sites
                .iter()
                .zip(&betas)
                .map(|(s, b)| self.weighted_lasso(s, b, &omega, lambda))
                .collect::<Result<Vec<_>>>()?;
            betas = next;
        }
        Ok(betas)
    }

    fn expand(&self, screened: &[DVector<f64>]) -> Result<CoefficientBundle> {
        let full: Vec<DVector<f64>> = screened
            .iter()
            .map(|b| {
                let mut out = DVector::zeros(self.p);
                for (k, &j) in self.columns.iter().enumerate() {
                    out[j] = b[k];
                }
                out
            })
            .collect();
        CoefficientBundle::from_site_betas(&full)
    }

    pub fn fit(&self, lambda: f64, opts: &SmaOptions) -> Result<CoefficientBundle> {
        self.expand(&self.solve_screened(lambda, opts)?)
    }

    /// Objective value at full-dimensional site coefficients (screened part only).
    pub fn objective_at(&self, bundle: &CoefficientBundle, lambda: f64) -> f64 {
        let screened: Vec<DVector<f64>> = (0..self.sites.len())
            .map(|m| DVector::from_iterator(self.columns.len(), self.columns.iter().map(|&j| bundle.beta()[(m, j)])))
            .collect();
        self.objective(&screened, lambda)
    }

    /// `λ` minimizing deviance plus `γ_N` times the number of nonzero site coefficients.
    pub fn select_by_gic(&self, schedule: GammaSchedule, opts: &SmaOptions) -> Result<(f64, CoefficientBundle)> {
        let gamma = schedule.gamma(self.n_total as u64, self.p);
        let top = self.lambda_top(opts.epsilon);
        let grid = if top > 0.0 { log_grid(top, opts.grid_ratio, opts.grid_len) } else { vec![0.0] };
        let mut best: Option<(f64, f64, Vec<DVector<f64>>)> = None;
        for &lambda in &grid {
            let betas = match self.solve_screened(lambda, opts) {
                Ok(b) => b,
                Err(e) if e.is_convergence() => {
                    log::warn!("meta-analysis fit failed at lambda {lambda:.3e}: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let df = betas
                .iter()
                .map(|b| b.iter().skip(1).filter(|&&v| v != 0.0).count())
                .sum::<usize>() as f64;
            let gic = self.deviance(&betas) + gamma * df;
            if best.as_ref().is_none_or(|(g, _, _)| gic < *g) {
                best = Some((gic, lambda, betas));
            }
        }
        let (_, lambda, betas) = best.ok_or(ShirError::AllGridPointsFailed { failures: grid.len() })?;
        Ok((lambda, self.expand(&betas)?))
    }
}

pub fn fit_sma(studies: &[StudyData], family: LossFamily, lambda: f64, opts: &SmaOptions) -> Result<CoefficientBundle> {
    SmaPrepared::new(studies, family, opts)?.fit(lambda, opts)
}

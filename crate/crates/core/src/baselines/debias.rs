//! Debiased local LASSO fits averaged at the centre, then thresholded.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregator::prox::{group_hard, group_soft, hard, l2, soft};
use crate::aggregator::{CoefficientBundle, GammaSchedule};
use crate::error::{check_dim, Result, ShirError};
use crate::glm::{gradient, hessian, LossFamily, StudyData};
use crate::local::lasso::log_grid;
use crate::local::{LocalFit, LocalSummary};
use crate::tuning::deviance;

/// Multiplier in the nodewise penalty `λ_j = c·√(H_jj·log p / n)`.
pub const DEFAULT_NODEWISE_C: f64 = 0.5;

/// Points per threshold grid.
pub const THRESHOLD_GRID_LEN: usize = 30;

/// Approximate inverse of a site Hessian.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub theta: DMatrix<f64>,
    /// Nodewise penalty used for each column.
    pub lambdas: Vec<f64>,
}

/// Minimizes `½(γᵀGγ − 2γᵀh) + λ‖γ‖₁` by coordinate descent with an
/// incrementally maintained gradient.
fn quadratic_lasso(g: &DMatrix<f64>, h: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let q = h.len();
    let mut gamma = DVector::zeros(q);
    // grad = Gγ − h
    let mut grad = -h.clone();
    let max_sweeps = 100_000;
    for sweep in 0..max_sweeps {
        let mut change: f64 = 0.0;
        for k in 0..q {
            let a = g[(k, k)];
            if a <= 0.0 {
                continue;
            }
            let new = soft(a * gamma[k] - grad[k], lambda) / a;
            let delta = new - gamma[k];
            if delta != 0.0 {
                gamma[k] = new;
                grad.axpy(delta, &g.column(k), 1.0);
                change = change.max(delta.abs() * a.sqrt());
            }
        }
        if change < 1e-12 {
            return Ok(gamma);
        }
        if sweep + 1 == max_sweeps {
            break;
        }
    }
    Err(ShirError::Convergence {
        solver: "nodewise coordinate descent",
        iterations: max_sweeps,
        kkt: f64::NAN,
    })
}

/// Nodewise LASSO on a Gram-type matrix `h` (here the loss Hessian, i.e. the
/// Gram matrix of the curvature-weighted design).
///
/// Row `j` of `Θ̂` is `(−γ̂_j, 1)/τ̂_j²` placed at `(−j, j)`, where `γ̂_j`
/// regresses column `j` on the rest with penalty `λ_j` and
/// `τ̂_j² = H_jj − H_{j,−j}γ̂_j`.
pub fn nodewise_from_hessian(h: &DMatrix<f64>, n: usize, c: f64) -> Result<PrecisionEstimate> {
    let p = h.nrows();
    check_dim("nodewise Hessian columns", p, h.ncols())?;
    let log_p = (p as f64).ln().max(1.0);
    let mut theta = DMatrix::zeros(p, p);
    let mut lambdas = Vec::with_capacity(p);
    for j in 0..p {
        let hjj = h[(j, j)];
        if !(hjj > 0.0) {
            return Err(ShirError::DegenerateColumn { column: j });
        }
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let g = h.select_rows(&rest).select_columns(&rest);
        let hv = DVector::from_iterator(p - 1, rest.iter().map(|&k| h[(k, j)]));
        let lambda = c * (hjj * log_p / n as f64).sqrt();
        let gamma = quadratic_lasso(&g, &hv, lambda)?;
        let tau2 = hjj - hv.dot(&gamma);
        if !(tau2 > 1e-12 * hjj) {
            return Err(ShirError::DegenerateColumn { column: j });
        }
        theta[(j, j)] = 1.0 / tau2;
        for (idx, &k) in rest.iter().enumerate() {
            theta[(j, k)] = -gamma[idx] / tau2;
        }
        lambdas.push(lambda);
    }
    Ok(PrecisionEstimate { theta, lambdas })
}

/// Nodewise precision of the site Hessian at `beta_hat`.
pub fn nodewise_precision(
    data: &StudyData,
    family: LossFamily,
    beta_hat: &DVector<f64>,
) -> Result<PrecisionEstimate> {
    let h = hessian(data, beta_hat, family)?;
    nodewise_from_hessian(&h, data.n(), DEFAULT_NODEWISE_C)
        .map_err(|e| e.at_site(data.site_id()))
}

/// What one site contributes: its LASSO fit, gradient there, and `Θ̂`.
#[derive(Debug, Clone)]
pub struct DebiasSite {
    pub beta_lasso: DVector<f64>,
    pub gradient: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl DebiasSite {
    pub fn new(data: &StudyData, family: LossFamily, fit: &LocalFit) -> Result<Self> {
        let precision = nodewise_precision(data, family, &fit.beta)?.theta;
        Ok(Self {
            beta_lasso: fit.beta.clone(),
            gradient: gradient(data, &fit.beta, family)?,
            precision,
        })
    }

    /// `β̂ − Θ̂∇L̂(β̂)`
    pub fn debiased(&self) -> DVector<f64> {
        &self.beta_lasso - &self.precision * &self.gradient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Hard,
    #[default]
    Soft,
}

/// Thresholds for `μ` (componentwise) and the deviation groups `α_j`.
/// The intercept is never thresholded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub kind: ThresholdKind,
    pub tau1: f64,
    pub tau2: f64,
}

/// Untruncated average of the debiased site estimates, `(μ̃, α̃)`.
pub fn debiased_average(sites: &[DebiasSite]) -> Result<CoefficientBundle> {
    if sites.is_empty() {
        return Err(ShirError::InvalidInput("no sites".into()));
    }
    let betas: Vec<DVector<f64>> = sites.iter().map(DebiasSite::debiased).collect();
    CoefficientBundle::from_site_betas(&betas)
}

/// Applies the threshold rule to an untruncated bundle.
pub fn apply_thresholds(raw: &CoefficientBundle, rule: &ThresholdRule) -> Result<CoefficientBundle> {
    if !(rule.tau1 >= 0.0) || !(rule.tau2 >= 0.0) {
        return Err(ShirError::InvalidInput("thresholds must be nonnegative".into()));
    }
    let mut mu = raw.mu().clone();
    let mut alpha = raw.alpha().clone();
    for j in 1..raw.p() {
        mu[j] = match rule.kind {
            ThresholdKind::Hard => hard(mu[j], rule.tau1),
            ThresholdKind::Soft => soft(mu[j], rule.tau1),
        };
        let mut col: Vec<f64> = alpha.column(j).iter().copied().collect();
        match rule.kind {
            ThresholdKind::Hard => group_hard(&mut col, rule.tau2),
            ThresholdKind::Soft => group_soft(&mut col, rule.tau2),
        }
        alpha.column_mut(j).copy_from_slice(&col);
    }
    CoefficientBundle::from_parts(mu, alpha)
}

pub fn fit_debias_lnb(sites: &[DebiasSite], rule: &ThresholdRule) -> Result<CoefficientBundle> {
    apply_thresholds(&debiased_average(sites)?, rule)
}

/// `0` followed by `len − 1` log-spaced values from `10⁻³·top` to `top`.
fn threshold_grid(top: f64, len: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if top > 0.0 && len > 1 {
        let mut up = log_grid(top, 1e-3, len - 1);
        up.reverse();
        grid.extend(up);
    }
    grid
}

/// Chooses `(τ₁, τ₂)` minimizing the summary deviance plus `γ_N` times the
/// parameter count `|Ŝ_μ| + (M − 1)|Ŝ_α|`.
pub fn select_debias_by_gic(
    sites: &[DebiasSite],
    summaries: &[LocalSummary],
    kind: ThresholdKind,
    schedule: GammaSchedule,
) -> Result<(ThresholdRule, CoefficientBundle)> {
    check_dim("debias sites vs summaries", summaries.len(), sites.len())?;
    let raw = debiased_average(sites)?;
    let p = raw.p();
    let m = raw.num_sites();
    let n_total: u64 = summaries.iter().map(|s| s.n).sum();
    let gamma = schedule.gamma(n_total, p);
    let mu_top = (1..p).map(|j| raw.mu()[j].abs()).fold(0.0, f64::max);
    let alpha_top = (1..p)
        .map(|j| l2(raw.alpha().column(j).as_slice()))
        .fold(0.0, f64::max);

    let mut best: Option<(f64, ThresholdRule, CoefficientBundle)> = None;
    for &tau1 in &threshold_grid(mu_top, THRESHOLD_GRID_LEN) {
        for &tau2 in &threshold_grid(alpha_top, THRESHOLD_GRID_LEN) {
            let rule = ThresholdRule { kind, tau1, tau2 };
            let b = apply_thresholds(&raw, &rule)?;
            let df = (b.active_mu().len() + (m - 1) * b.active_alpha().len()) as f64;
            let gic = deviance(summaries, &b)? + gamma * df;
            // Iteration is in increasing thresholds, so `<=` keeps the sparser model on ties.
            if best.as_ref().is_none_or(|(g, _, _)| gic <= *g) {
                best = Some((gic, rule, b));
            }
        }
    }
    let (_, rule, bundle) = best.expect("grids are nonempty");
    Ok((rule, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_hessian_inverts_exactly() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 4.0]));
        let est = nodewise_from_hessian(&h, 100, 0.5).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 0.25]));
        assert!((est.theta - expected).amax() < 1e-15);
    }

    #[test]
    fn unpenalized_two_by_two_is_the_inverse() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let est = nodewise_from_hessian(&h, 100, 0.0).unwrap();
        let inv = h.try_inverse().unwrap();
        assert!((est.theta - inv).amax() < 1e-12);
    }

    #[test]
    fn ar1_precision_is_close_to_inverse() {
        let p = 20;
        let r: f64 = 0.4;
        let h = DMatrix::from_fn(p, p, |i, j| r.powi((i as i32 - j as i32).abs()));
        let n = 2000;
        let est = nodewise_from_hessian(&h, n, DEFAULT_NODEWISE_C).unwrap();
        let err = (&est.theta * &h - DMatrix::identity(p, p)).amax();
        // Per-row KKT: |(ΘH − I)_{jk}| ≤ λ_j/τ_j² off the diagonal, and the
        // diagonal is exact by construction of τ².
        let inv = h.clone().try_inverse().unwrap();
        let bound = (0..p)
            .map(|j| est.lambdas[j] * inv[(j, j)] * 1.5)
            .fold(0.0, f64::max);
        assert!(err <= bound, "{err} > {bound}");
        for j in 0..p {
            assert!(((&est.theta * &h)[(j, j)] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn debiasing_with_exact_inverse_gives_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(40, |i, _| cov[(i, 0)] - 0.5 * cov[(i, 2)] + rng.random_range(-0.3..0.3));
        let d = StudyData::from_covariates("s", &cov, y).unwrap();
        let beta = crate::local::fit_local_lasso(&d, LossFamily::SquaredError, 0.05).unwrap();
        let h = hessian(&d, &beta, LossFamily::SquaredError).unwrap();
        let site = DebiasSite {
            gradient: gradient(&d, &beta, LossFamily::SquaredError).unwrap(),
            beta_lasso: beta,
            precision: h.try_inverse().unwrap(),
        };
        let ols = d
            .x()
            .tr_mul(d.x())
            .cholesky()
            .unwrap()
            .solve(&d.x().tr_mul(d.y()));
        assert!((site.debiased() - ols).amax() < 1e-8);
    }

    fn toy_sites() -> Vec<DebiasSite> {
        (0..3)
            .map(|k| DebiasSite {
                beta_lasso: DVector::from_vec(vec![0.1 * k as f64, 1.0, 0.2 * k as f64 - 0.2, 0.01]),
                gradient: DVector::zeros(4),
                precision: DMatrix::identity(4, 4),
            })
            .collect()
    }

    #[test]
    fn thresholds_zero_and_infinite() {
        let sites = toy_sites();
        let dense = fit_debias_lnb(&sites, &ThresholdRule { kind: ThresholdKind::Soft, tau1: 0.0, tau2: 0.0 }).unwrap();
        assert_eq!(dense, debiased_average(&sites).unwrap());
        let sparse = fit_debias_lnb(
            &sites,
            &ThresholdRule { kind: ThresholdKind::Hard, tau1: f64::INFINITY, tau2: f64::INFINITY },
        )
        .unwrap();
        assert!(sparse.active_mu().is_empty() && sparse.active_alpha().is_empty());
        assert_eq!(sparse.mu()[0], dense.mu()[0]);
        assert_eq!(sparse.alpha().column(0), dense.alpha().column(0));
        for j in 0..4 {
            assert!(sparse.alpha().column(j).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn gic_thresholds_are_on_the_grid() {
        let sites = toy_sites();
        let sums: Vec<LocalSummary> = (0..3)
            .map(|k| LocalSummary {
                site_id: format!("s{k}"),
                n: 100,
                p: 4,
                h: DMatrix::identity(4, 4) * 2.0,
                g: sites[k].beta_lasso.clone() * 2.0,
                family: LossFamily::SquaredError,
                lambda_m: 0.0,
                schema_version: 1,
            })
            .collect();
        let (rule, b) = select_debias_by_gic(&sites, &sums, ThresholdKind::Soft, GammaSchedule::Bic).unwrap();
        assert!(rule.tau1 >= 0.0 && rule.tau2 >= 0.0);
        assert!(b.active_mu().contains(&1));
        assert!(!b.active_mu().contains(&3));
    }
}

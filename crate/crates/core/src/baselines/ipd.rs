//! Pooled individual-level fit under the mixture penalty (benchmark only: it
//! needs every site's raw data).
//!
//! The objective is `2N⁻¹Σₘ nₘL̂ₘ(μ + α⁽ᵐ⁾) + λρ₂`, i.e. the pooled loss on the
//! same doubled scale as the summary surrogate, so one `PenaltyConfig` means
//! the same amount of shrinkage for both estimators. Each proximal Newton step
//! solves the surrogate built from exact summaries at the current iterate.

use crate::aggregator::{
    kkt_residual, solve_shir_with, CoefficientBundle, GammaSchedule, PenaltyConfig, SolverOptions,
};
use crate::error::{Result, ShirError};
use crate::glm::{empirical_loss, LossFamily, StudyData};
use crate::local::lasso::intercept_only;
use crate::local::summary::expand_at;
use crate::local::LocalSummary;
use crate::tuning::{degrees_of_freedom, default_lambda_grid, search_grid, Evaluated, GicResult};

#[derive(Debug, Clone)]
pub struct IpdOptions {
    pub max_newton: usize,
    pub kkt_tol: f64,
    pub solver: SolverOptions,
}

impl Default for IpdOptions {
    fn default() -> Self {
        Self {
            max_newton: 50,
            kkt_tol: 1e-8,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpdOutcome {
    pub bundle: CoefficientBundle,
    pub objective: f64,
    pub kkt: f64,
    pub newton_steps: usize,
}

pub(crate) fn check_studies(studies: &[StudyData], family: LossFamily) -> Result<usize> {
    let first = studies
        .first()
        .ok_or_else(|| ShirError::InvalidInput("no studies".into()))?;
    for s in studies {
        s.validate_for(family)?;
        if s.p() != first.p() {
            return Err(ShirError::SiteMismatch {
                site: s.site_id().to_string(),
                reason: format!("dimension {} differs from {}", s.p(), first.p()),
            });
        }
    }
    Ok(first.p())
}

/// `2N⁻¹ Σₘ nₘ L̂ₘ(β⁽ᵐ⁾)`
pub fn ipd_deviance(studies: &[StudyData], family: LossFamily, bundle: &CoefficientBundle) -> Result<f64> {
    let n_total: usize = studies.iter().map(|s| s.n()).sum();
    let mut total = 0.0;
    for (m, s) in studies.iter().enumerate() {
        total += s.n() as f64 * empirical_loss(s, &bundle.site_beta(m), family)?;
    }
    Ok(2.0 * total / n_total as f64)
}

fn penalty(bundle: &CoefficientBundle, cfg: &PenaltyConfig) -> f64 {
    let p = bundle.p();
    let l1: f64 = (1..p).map(|j| bundle.mu()[j].abs()).sum();
    let groups: f64 = (1..p).map(|j| bundle.alpha().column(j).norm()).sum();
    cfg.lambda * (l1 + cfg.lambda_g * groups)
}

pub fn ipd_objective(
    studies: &[StudyData],
    family: LossFamily,
    bundle: &CoefficientBundle,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    Ok(ipd_deviance(studies, family, bundle)? + penalty(bundle, cfg))
}

/// Summaries expanded at the bundle's own site coefficients.
pub fn exact_summaries(
    studies: &[StudyData],
    family: LossFamily,
    bundle: &CoefficientBundle,
) -> Result<Vec<LocalSummary>> {
    studies
        .iter()
        .enumerate()
        .map(|(m, s)| expand_at(s, &bundle.site_beta(m), family))
        .collect()
}

fn interpolate(a: &CoefficientBundle, b: &CoefficientBundle, t: f64) -> CoefficientBundle {
    let mu = a.mu() + (b.mu() - a.mu()) * t;
    let alpha = a.alpha() + (b.alpha() - a.alpha()) * t;
    CoefficientBundle::from_parts(mu, alpha).expect("same shapes")
}

pub fn fit_ipd(studies: &[StudyData], family: LossFamily, cfg: &PenaltyConfig) -> Result<CoefficientBundle> {
    fit_ipd_with(studies, family, cfg, &IpdOptions::default(), None).map(|o| o.bundle)
}

pub fn fit_ipd_with(
    studies: &[StudyData],
    family: LossFamily,
    cfg: &PenaltyConfig,
    opts: &IpdOptions,
    warm: Option<&CoefficientBundle>,
) -> Result<IpdOutcome> {
    let p = check_studies(studies, family)?;
    let m = studies.len();
    let mut cur = match warm {
        Some(b) => b.clone(),
        None => CoefficientBundle::zeros(m, p),
    };
    let mut f_cur = ipd_objective(studies, family, &cur, cfg)?;
    let mut kkt = f64::INFINITY;
    for step in 0..opts.max_newton {
        let sums = exact_summaries(studies, family, &cur)?;
        kkt = kkt_residual(&sums, &cur, cfg)?;
        if kkt <= opts.kkt_tol {
            return Ok(IpdOutcome {
                bundle: cur,
                objective: f_cur,
                kkt,
                newton_steps: step,
            });
        }
        let cand = solve_shir_with(&sums, cfg, &opts.solver, Some(&cur))?.bundle;
        let mut t = 1.0;
        let (next, f_next) = loop {
            let trial = if t == 1.0 { cand.clone() } else { interpolate(&cur, &cand, t) };
            let f = ipd_objective(studies, family, &trial, cfg)?;
            if f <= f_cur + 1e-13 * f_cur.abs().max(1.0) {
                break (trial, f);
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(ShirError::Convergence {
                    solver: "pooled proximal Newton (line search)",
                    iterations: step + 1,
                    kkt,
                });
            }
        };
        cur = next;
        f_cur = f_next;
    }
    Err(ShirError::Convergence {
        solver: "pooled proximal Newton",
        iterations: opts.max_newton,
        kkt,
    })
}

/// Penalty grid for the pooled fit: from the critical value at the
/// site-specific intercept-only model down by a factor of 100.
pub fn ipd_lambda_grid(studies: &[StudyData], family: LossFamily, lambda_g_grid: &[f64]) -> Result<Vec<f64>> {
    check_studies(studies, family)?;
    let sums = studies
        .iter()
        .map(|s| expand_at(s, &intercept_only(s, family)?, family))
        .collect::<Result<Vec<_>>>()?;
    default_lambda_grid(&sums, lambda_g_grid)
}

/// GIC-tuned pooled fit with deviance `2N⁻¹Σ nₘL̂ₘ` and the trace DF
/// evaluated on exact summaries at the solution.
pub fn select_ipd_by_gic(
    studies: &[StudyData],
    family: LossFamily,
    lambda_grid: &[f64],
    lambda_g_grid: &[f64],
    schedule: GammaSchedule,
) -> Result<GicResult> {
    let p = check_studies(studies, family)?;
    let n_total: u64 = studies.iter().map(|s| s.n() as u64).sum();
    let gamma = schedule.gamma(n_total, p);
    let opts = IpdOptions::default();
    let search = search_grid(lambda_grid, lambda_g_grid, gamma, |cfg, warm| {
        let o = fit_ipd_with(studies, family, cfg, &opts, warm)?;
        let sums = exact_summaries(studies, family, &o.bundle)?;
        Ok(Evaluated {
            deviance: ipd_deviance(studies, family, &o.bundle)?,
            df: degrees_of_freedom(&sums, &o.bundle, cfg)?,
            kkt: o.kkt,
            bundle: o.bundle,
        })
    })?;
    Ok(search.best)
}

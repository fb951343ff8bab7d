//! Penalty selection by a generalized information criterion.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::aggregator::{
    lambda_critical, solve_shir_with, CoefficientBundle, GammaSchedule, PenaltyConfig, Problem,
    SolverOptions,
};
use crate::error::{Result, ShirError};
use crate::local::lasso::log_grid;
use crate::local::LocalSummary;

pub const DEFAULT_LAMBDA_GRID_LEN: usize = 50;
pub const DEFAULT_LAMBDA_GRID_RATIO: f64 = 1e-2;

/// Selected grid point.
#[derive(Debug, Clone)]
pub struct GicResult {
    pub lambda: f64,
    pub lambda_g: f64,
    pub deviance: f64,
    pub df: f64,
    pub gamma: f64,
    /// `deviance + gamma·df`
    pub gic: f64,
    pub kkt: f64,
    pub bundle: CoefficientBundle,
}

/// One evaluated grid point. Failed solves carry `gic = +∞` and an error message.
#[derive(Debug, Clone)]
pub struct GicRow {
    pub lambda: f64,
    pub lambda_g: f64,
    pub deviance: f64,
    pub df: f64,
    pub gic: f64,
    pub kkt: f64,
    pub active_mu: usize,
    pub active_alpha: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GicSearch {
    pub best: GicResult,
    pub table: Vec<GicRow>,
}

/// `N⁻¹ Σₘ nₘ(β⁽ᵐ⁾ᵀH⁽ᵐ⁾β⁽ᵐ⁾ − 2g⁽ᵐ⁾ᵀβ⁽ᵐ⁾)`
pub fn deviance(summaries: &[LocalSummary], bundle: &CoefficientBundle) -> Result<f64> {
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.import(bundle)?;
    Ok(prob.objective_direct(&mu, &alpha, &PenaltyConfig::new(0.0, 0.0)))
}

/// Trace of `[∂²Q]⁻¹ ∂²L` over the active coordinates with `α⁽¹⁾` eliminated.
///
/// The free parameters are `μ_j` for the intercept and every nonzero `μ_j`,
/// and `α_j⁽²⁾, …, α_j⁽ᴹ⁾` for the intercept and every nonzero group. The
/// `ℓ₁` part of the penalty has no curvature on its active set; each active
/// group contributes `λλ_g(I/‖α_j‖ − α_jα_jᵀ/‖α_j‖³)` mapped through the
/// elimination.
pub fn degrees_of_freedom(
    summaries: &[LocalSummary],
    bundle: &CoefficientBundle,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    let prob = Problem::new(summaries)?;
    let (mu, alpha) = prob.import(bundle)?;
    let (m, p) = (prob.m, prob.p);

    let mu_cols: Vec<usize> = (0..p).filter(|&j| j == 0 || mu[j] != 0.0).collect();
    let alpha_cols: Vec<usize> = (0..p)
        .filter(|&j| j == 0 || alpha[j * m..(j + 1) * m].iter().any(|&a| a != 0.0))
        .collect();

    // Parameter list: (column, owner) with owner None for μ and Some(k) for α⁽ᵏ⁾, k ≥ 1.
    let mut params: Vec<(usize, Option<usize>)> = mu_cols.iter().map(|&j| (j, None)).collect();
    if m > 1 {
        for &j in &alpha_cols {
            params.extend((1..m).map(|k| (j, Some(k))));
        }
    }
    let q = params.len();

    // ∂β⁽ᵏ⁾_j / ∂θ for parameter (j, owner).
    let coef = |owner: Option<usize>, k: usize| -> f64 {
        match owner {
            None => 1.0,
            Some(o) if o == k => 1.0,
            Some(_) if k == 0 => -1.0,
            Some(_) => 0.0,
        }
    };

    let mut smooth = DMatrix::zeros(q, q);
    for k in 0..m {
        let scale = 2.0 * prob.w[k];
        for (a, &(ja, oa)) in params.iter().enumerate() {
            let ca = coef(oa, k);
            if ca == 0.0 {
                continue;
            }
            for (b, &(jb, ob)) in params.iter().enumerate().skip(a) {
                let cb = coef(ob, k);
                if cb == 0.0 {
                    continue;
                }
                smooth[(a, b)] += scale * ca * cb * prob.h[k][(ja, jb)];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            smooth[(a, b)] = smooth[(b, a)];
        }
    }

    let mut full = smooth.clone();
    let tau = cfg.lambda * cfg.lambda_g;
    if m > 1 && tau > 0.0 {
        for &j in alpha_cols.iter().filter(|&&j| j != 0) {
            let col = &alpha[j * m..(j + 1) * m];
            let norm = col.iter().map(|a| a * a).sum::<f64>().sqrt();
            // B = τ(I/‖a‖ − aaᵀ/‖a‖³); in eliminated coordinates EᵀBE with E = [−1ᵀ; I].
            let b = |r: usize, s: usize| -> f64 {
                let id = if r == s { 1.0 / norm } else { 0.0 };
                tau * (id - col[r] * col[s] / norm.powi(3))
            };
            let start = params
                .iter()
                .position(|&(c, o)| c == j && o.is_some())
                .expect("active group is parameterized");
            for r in 1..m {
                for s in 1..m {
                    let v = b(r, s) - b(0, s) - b(r, 0) + b(0, 0);
                    full[(start + r - 1, start + s - 1)] += v;
                }
            }
        }
    }

    let lu = full.clone().lu();
    let solved: DMatrix<f64> = lu.solve(&smooth).ok_or_else(|| {
        ShirError::Singular(format!(
            "restricted Hessian over {} shared and {} deviation columns",
            mu_cols.len(),
            alpha_cols.len()
        ))
    })?;
    let df: f64 = solved.trace();
    if !df.is_finite() {
        return Err(ShirError::Singular("restricted Hessian is numerically singular".into()));
    }
    Ok(df)
}

/// 50 log-spaced values from the largest critical `λ` over `lambda_g_grid`
/// down to a hundredth of it.
pub fn default_lambda_grid(summaries: &[LocalSummary], lambda_g_grid: &[f64]) -> Result<Vec<f64>> {
    let mut top: f64 = 0.0;
    for &lg in lambda_g_grid {
        top = top.max(lambda_critical(summaries, lg)?);
    }
    if !(top > 0.0) || !top.is_finite() {
        return Err(ShirError::InvalidInput(format!("critical penalty is {top}")));
    }
    Ok(log_grid(top, DEFAULT_LAMBDA_GRID_RATIO, DEFAULT_LAMBDA_GRID_LEN))
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(ShirError::InvalidInput(format!("empty {name} grid")));
    }
    if grid.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(ShirError::InvalidInput(format!("{name} grid must be finite and nonnegative")));
    }
    Ok(())
}

/// Whether `a` beats `b`: smaller criterion, then larger `λ`, then larger `λ_g`.
fn better(a: &GicRow, b: &GicRow) -> bool {
    if a.gic != b.gic {
        return a.gic < b.gic;
    }
    if a.lambda != b.lambda {
        return a.lambda > b.lambda;
    }
    a.lambda_g > b.lambda_g
}

/// A solved grid point.
pub(crate) struct Evaluated {
    pub bundle: CoefficientBundle,
    pub deviance: f64,
    pub df: f64,
    pub kkt: f64,
}

fn lambda_g_path<F>(lambdas: &[f64], lambda_g: f64, gamma: f64, eval: &F) -> Vec<(GicRow, Option<CoefficientBundle>)>
where
    F: Fn(&PenaltyConfig, Option<&CoefficientBundle>) -> Result<Evaluated>,
{
    let mut warm: Option<CoefficientBundle> = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = PenaltyConfig::new(lambda, lambda_g);
        match eval(&cfg, warm.as_ref()) {
            Ok(e) => {
                let row = GicRow {
                    lambda,
                    lambda_g,
                    deviance: e.deviance,
                    df: e.df,
                    gic: e.deviance + gamma * e.df,
                    kkt: e.kkt,
                    active_mu: e.bundle.active_mu().len(),
                    active_alpha: e.bundle.active_alpha().len(),
                    error: None,
                };
                warm = Some(e.bundle.clone());
                out.push((row, Some(e.bundle)));
            }
            Err(e) => {
                log::warn!("grid point lambda={lambda:.4e} lambda_g={lambda_g:.4e} failed: {e}");
                let row = GicRow {
                    lambda,
                    lambda_g,
                    deviance: f64::NAN,
                    df: f64::NAN,
                    gic: f64::INFINITY,
                    kkt: f64::NAN,
                    active_mu: 0,
                    active_alpha: 0,
                    error: Some(e.to_string()),
                };
                out.push((row, None));
            }
        }
    }
    out
}

/// Runs `eval` over the grid, warm-started along decreasing `λ` for each
/// `λ_g` (the `λ_g` paths run in parallel), and reduces to the minimizer.
pub(crate) fn search_grid<F>(
    lambda_grid: &[f64],
    lambda_g_grid: &[f64],
    gamma: f64,
    eval: F,
) -> Result<GicSearch>
where
    F: Fn(&PenaltyConfig, Option<&CoefficientBundle>) -> Result<Evaluated> + Sync,
{
    check_grid("lambda", lambda_grid)?;
    check_grid("lambda_g", lambda_g_grid)?;
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();

    let paths: Vec<Vec<(GicRow, Option<CoefficientBundle>)>> = lambda_g_grid
        .par_iter()
        .map(|&lg| lambda_g_path(&lambdas, lg, gamma, &eval))
        .collect();

    let mut best: Option<(GicRow, CoefficientBundle)> = None;
    let mut table = Vec::new();
    let mut failures = 0;
    for (row, bundle) in paths.into_iter().flatten() {
        match bundle {
            Some(b) => {
                if best.as_ref().is_none_or(|(r, _)| better(&row, r)) {
                    best = Some((row.clone(), b));
                }
            }
            None => failures += 1,
        }
        table.push(row);
    }
    let (row, bundle) = best.ok_or(ShirError::AllGridPointsFailed { failures })?;
    Ok(GicSearch {
        best: GicResult {
            lambda: row.lambda,
            lambda_g: row.lambda_g,
            deviance: row.deviance,
            df: row.df,
            gamma,
            gic: row.gic,
            kkt: row.kkt,
            bundle,
        },
        table,
    })
}

/// Evaluates every `(λ, λ_g)` pair and keeps the criterion minimizer along
/// with the full table (ordered by `λ_g` as given, then `λ` descending).
pub fn gic_search(
    summaries: &[LocalSummary],
    lambda_grid: &[f64],
    lambda_g_grid: &[f64],
    schedule: GammaSchedule,
) -> Result<GicSearch> {
    let prob = Problem::new(summaries)?;
    let gamma = schedule.gamma(prob.n_total(), prob.p);
    let opts = SolverOptions::default();
    search_grid(lambda_grid, lambda_g_grid, gamma, |cfg, warm| {
        let o = solve_shir_with(summaries, cfg, &opts, warm)?;
        Ok(Evaluated {
            deviance: deviance(summaries, &o.bundle)?,
            df: degrees_of_freedom(summaries, &o.bundle, cfg)?,
            kkt: o.kkt,
            bundle: o.bundle,
        })
    })
}

/// Grid point minimizing `deviance + γ_N·DF`; ties go to the larger `λ`,
/// then the larger `λ_g`.
pub fn select_by_gic(
    summaries: &[LocalSummary],
    lambda_grid: &[f64],
    lambda_g_grid: &[f64],
    schedule: GammaSchedule,
) -> Result<GicResult> {
    gic_search(summaries, lambda_grid, lambda_g_grid, schedule).map(|s| s.best)
}

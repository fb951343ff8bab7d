use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ShirError};
use crate::glm::{empirical_loss, LossFamily, StudyData};
use crate::local::lasso::{fit_local_lasso_with, LassoOptions};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_GRID_LEN: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

/// A site's selected LASSO fit.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub beta: DVector<f64>,
    pub lambda_m: f64,
    /// `(λ, mean out-of-fold loss)` in grid (descending) order.
    pub cv_curve: Vec<(f64, f64)>,
}

impl LocalFit {
    /// Wraps a fit at a fixed penalty (no cross-validation).
    pub fn fixed(beta: DVector<f64>, lambda_m: f64) -> Self {
        Self {
            beta,
            lambda_m,
            cv_curve: Vec::new(),
        }
    }
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, &i) in perm.iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn training_rows(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn has_single_class(data: &StudyData, rows: &[usize]) -> bool {
    let first = data.y()[rows[0]];
    rows.iter().all(|&i| data.y()[i] == first)
}

/// Out-of-fold loss along the grid for one training/validation split.
/// Points whose fit fails to converge score `+∞`.
fn fold_path(
    train: &StudyData,
    valid: &StudyData,
    family: LossFamily,
    grid: &[f64],
    opts: &LassoOptions,
) -> Result<Vec<f64>> {
    let mut warm: Option<DVector<f64>> = None;
    let mut losses = Vec::with_capacity(grid.len());
    for &lambda in grid {
        match fit_local_lasso_with(train, family, lambda, opts, warm.as_ref()) {
            Ok(out) => {
                losses.push(empirical_loss(valid, &out.beta, family).unwrap_or(f64::INFINITY));
                warm = Some(out.beta);
            }
            Err(e) if e.is_convergence() => {
                log::debug!("cv fold fit failed at lambda {lambda:.3e}: {e}");
                losses.push(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(losses)
}

/// K-fold cross-validated choice of the site penalty, then a refit on all rows.
///
/// Folds come from a permutation seeded by `seed`. For the logistic family a
/// training split with a single response class triggers one reshuffle with a
/// derived seed before giving up.
pub fn cross_validate_lambda(
    data: &StudyData,
    family: LossFamily,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<LocalFit> {
    if folds < 2 {
        return Err(ShirError::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    if folds > data.n() {
        return Err(ShirError::InvalidInput(format!(
            "{folds} folds requested for {} observations",
            data.n()
        )));
    }
    if grid.is_empty() {
        return Err(ShirError::InvalidInput("empty penalty grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) || grid.iter().any(|&l| !(l >= 0.0)) {
        return Err(ShirError::InvalidInput(
            "penalty grid must be nonnegative and strictly decreasing".into(),
        ));
    }
    data.validate_for(family)?;
    let n = data.n();

    let mut assignment = fold_assignment(n, folds, seed);
    if family == LossFamily::Logistic {
        let degenerate = |a: &[Vec<usize>]| {
            a.iter()
                .position(|f| has_single_class(data, &training_rows(n, f)))
        };
        if degenerate(&assignment).is_some() {
            assignment = fold_assignment(n, folds, seed ^ 0x5DEE_CE66_D1CE_F00D);
            if let Some(fold) = degenerate(&assignment) {
                return Err(ShirError::DegenerateFold { fold });
            }
        }
    }

    let opts = LassoOptions::default();
    let mut total = vec![0.0; grid.len()];
    for held_out in &assignment {
        let train = data.subset(&training_rows(n, held_out))?;
        let valid = data.subset(held_out)?;
        let losses = fold_path(&train, &valid, family, grid, &opts)?;
        for (t, l) in total.iter_mut().zip(&losses) {
            *t += l * held_out.len() as f64;
        }
    }
    let cv_curve: Vec<(f64, f64)> = grid
        .iter()
        .zip(&total)
        .map(|(&l, &t)| (l, t / n as f64))
        .collect();

    // Strict comparison keeps the larger penalty on ties.
    let mut best = 0;
    for (k, &(_, loss)) in cv_curve.iter().enumerate() {
        if loss < cv_curve[best].1 {
            best = k;
        }
    }
    if !cv_curve[best].1.is_finite() {
        return Err(ShirError::Convergence {
            solver: "cross-validation (every grid point failed)",
            iterations: grid.len(),
            kkt: f64::NAN,
        });
    }

    let mut warm: Option<DVector<f64>> = None;
    for &lambda in &grid[..=best] {
        let out = fit_local_lasso_with(data, family, lambda, &opts, warm.as_ref())?;
        warm = Some(out.beta);
    }
    Ok(LocalFit {
        beta: warm.expect("grid is nonempty"),
        lambda_m: grid[best],
        cv_curve,
    })
}

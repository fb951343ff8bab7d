//! Covariate covariance structures of the benchmark mechanisms.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mechanism;
use crate::error::{Result, ShirError};

/// Smallest eigenvalue tolerated before the assembled matrix is repaired.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// AR(1) correlation matrix, entries `r^|i−j|`.
pub fn ar1(q: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |i, j| r.powi(i.abs_diff(j) as i32))
}

/// `q1 × q2` matrix whose every column has `s1` randomly placed entries equal
/// to `±r` (independent random signs), zeros elsewhere.
pub fn sparse_loadings(q1: usize, q2: usize, r: f64, s1: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(q1, q2);
    for c in 0..q2 {
        for i in sample(rng, q1, s1.min(q1)) {
            g[(i, c)] = if rng.random_bool(0.5) { r } else { -r };
        }
    }
    g
}

/// `r_m = 0.4(m − 1)/M + 0.15`, sites numbered from 1.
pub fn site_correlation(m: usize, sites: usize) -> f64 {
    0.4 * (m as f64 - 1.0) / sites as f64 + 0.15
}

/// Block assembly `[[I + ΓᵀRΓ, (RΓ)ᵀ], [RΓ, R]]` with the loaded block first.
fn loaded_block(r_mat: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let s = gamma.ncols();
    let q = r_mat.nrows();
    let rg = r_mat * gamma;
    let ss = DMatrix::identity(s, s) + gamma.transpose() * &rg;
    let mut c = DMatrix::zeros(s + q, s + q);
    c.view_mut((0, 0), (s, s)).copy_from(&ss);
    c.view_mut((s, 0), (q, s)).copy_from(&rg);
    c.view_mut((0, s), (s, q)).copy_from(&rg.transpose());
    c.view_mut((s, s), (q, q)).copy_from(r_mat);
    c
}

/// Covariance of the `p` covariates (no intercept) at site `m` of `sites`.
pub fn gen_covariance_with(
    mechanism: Mechanism,
    m: usize,
    sites: usize,
    p: usize,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    let r = site_correlation(m, sites);
    let c = match mechanism {
        Mechanism::Strong | Mechanism::Weak => {
            if p < 9 {
                return Err(ShirError::InvalidInput(format!("mechanism {mechanism} needs p >= 9, got {p}")));
            }
            let gamma = sparse_loadings(p - 8, 8, r, 15, rng);
            loaded_block(&ar1(p - 8, r), &gamma)
        }
        Mechanism::Dense => {
            if p < 51 {
                return Err(ShirError::InvalidInput(format!("mechanism {mechanism} needs p >= 51, got {p}")));
            }
            let gamma = sparse_loadings(45, 5, r, 45, rng);
            let head = loaded_block(&ar1(45, r), &gamma);
            let mut c = DMatrix::zeros(p, p);
            c.view_mut((0, 0), (50, 50)).copy_from(&head);
            c.view_mut((50, 50), (p - 50, p - 50)).copy_from(&ar1(p - 50, r));
            c
        }
    };
    Ok(repair(c))
}

pub fn gen_covariance(mechanism: Mechanism, m: usize, sites: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    gen_covariance_with(mechanism, m, sites, p, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Raises eigenvalues below [`EIGEN_FLOOR`] to the floor.
pub fn repair(c: DMatrix<f64>) -> DMatrix<f64> {
    if c.clone().cholesky().is_some() {
        return c;
    }
    let eig = SymmetricEigen::new(c);
    let low = eig.eigenvalues.min();
    log::warn!("covariance has eigenvalue {low:.3e}; flooring at {EIGEN_FLOOR:e}");
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

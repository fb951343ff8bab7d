//! Site designs and Bernoulli responses of the benchmark mechanisms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::covariance::gen_covariance_with;
use super::{stream_id, Mechanism, SimSetting};
use crate::error::{Result, ShirError};
use crate::glm::{sigmoid, StudyData};

/// Generator for stream `stream` of the run seeded by `seed`.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generating coefficients (intercept first, length `p + 1`) at site `m`
/// (numbered from 1). `None` for the misspecified mechanism.
pub fn true_coefficients(mechanism: Mechanism, m: usize, p: usize, scale: f64) -> Option<DVector<f64>> {
    let (mu_mag, alpha_mag) = match mechanism {
        Mechanism::Strong => (0.5, 0.35),
        Mechanism::Weak => (0.2, 0.15),
        Mechanism::Dense => return None,
    };
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let mut beta = DVector::zeros(p + 1);
    for j in 1..=6 {
        beta[j] += scale * mu_mag * if j % 2 == 1 { 1.0 } else { -1.0 };
    }
    for (k, j) in (3..=8).enumerate() {
        beta[j] += scale * alpha_mag * sign * if k < 3 { 1.0 } else { -1.0 };
    }
    Some(beta)
}

/// Nonlinear predictor of the misspecified mechanism for one covariate row.
fn dense_predictor(x: &[f64], m: usize, scale: f64) -> f64 {
    let c = 0.25 + 0.15 * if m % 2 == 0 { 1.0 } else { -1.0 };
    let main: f64 = x[..5].iter().map(|&v| c * (v + 0.2 * v * v * v)).sum();
    let pairs: f64 = (0..4).map(|j| x[j] * x[j + 1]).sum();
    scale * (main + 0.1 * pairs)
}

/// One site's generating distribution for one replication.
#[derive(Debug, Clone)]
pub struct SiteModel {
    pub mechanism: Mechanism,
    /// Site number, from 1.
    pub m: usize,
    pub covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    pub beta0: Option<DVector<f64>>,
    scale: f64,
}

impl SiteModel {
    pub fn with_rng(setting: &SimSetting, m: usize, rng: &mut impl Rng) -> Result<Self> {
        setting.validate()?;
        if m == 0 || m > setting.sites {
            return Err(ShirError::InvalidInput(format!(
                "site number {m} outside 1..={}",
                setting.sites
            )));
        }
        let covariance = gen_covariance_with(setting.mechanism, m, setting.sites, setting.p, rng)?;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(ShirError::Singular("simulated covariance".into()))?
            .l();
        Ok(Self {
            mechanism: setting.mechanism,
            m,
            covariance,
            chol,
            beta0: true_coefficients(setting.mechanism, m, setting.p, setting.signal_scale),
            scale: setting.signal_scale,
        })
    }

    /// Site `m` of replication `rep`; Γ is redrawn for every replication.
    pub fn for_replication(setting: &SimSetting, rep: usize, m: usize) -> Result<Self> {
        Self::with_rng(setting, m, &mut rng_for(setting.seed, stream_id(rep, m, 0)))
    }

    /// Draws `n` rows: the design with its intercept column, Bernoulli
    /// responses and the true linear predictor.
    pub fn draw(&self, site_id: &str, n: usize, rng: &mut impl Rng) -> Result<(StudyData, DVector<f64>)> {
        let p = self.covariance.nrows();
        let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = z * self.chol.transpose();
        let eta = match &self.beta0 {
            Some(b) => {
                DVector::from_fn(n, |i, _| b[0] + (0..p).map(|j| cov[(i, j)] * b[j + 1]).sum::<f64>())
            }
            None => DVector::from_fn(n, |i, _| {
                let row: Vec<f64> = (0..5).map(|j| cov[(i, j)]).collect();
                dense_predictor(&row, self.m, self.scale)
            }),
        };
        let y = eta.map(|e| f64::from(rng.random::<f64>() < sigmoid(e)));
        Ok((StudyData::from_covariates(site_id, &cov, y)?, eta))
    }
}

pub(crate) fn site_name(m: usize) -> String {
    format!("site{m}")
}

/// Site `m` (from 1) drawn as replication 0 of a run seeded by `seed`.
pub fn gen_study(setting: &SimSetting, m: usize, seed: u64) -> Result<StudyData> {
    let s = SimSetting { seed, ..setting.clone() };
    let model = SiteModel::for_replication(&s, 0, m)?;
    let mut rng = rng_for(seed, stream_id(0, m, 1));
    Ok(model.draw(&site_name(m), s.n, &mut rng)?.0)
}

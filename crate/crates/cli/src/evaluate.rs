//! `shir evaluate`: a coefficient table and held-out site data in,
//! prediction metrics out.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use shir_core::glm::sigmoid;
use shir_core::{empirical_loss, LossFamily, Result};

use crate::coefficients::read_bundle_csv;
use crate::data::{default_site_id, read_study_csv};

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub bundle: PathBuf,
    /// `site=path` or a bare path (site id from the file stem).
    pub data: Vec<String>,
    pub response: String,
    pub family: LossFamily,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteMetrics {
    pub site: String,
    /// `site` when the table has coefficients for it, `shared` when `μ` is used.
    pub coefficients: &'static str,
    pub n: usize,
    pub loss: f64,
    /// Mean squared difference between the response and the fitted mean.
    pub mse: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

fn split_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((site, path)) if !site.is_empty() => (site.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(spec);
            (default_site_id(&p), p)
        }
    }
}

/// Area under the ROC curve by the rank-sum formula, ties at half weight.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(&y, _)| y == 1.0).map(|(_, r)| r).sum();
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub fn run(args: &EvaluateArgs) -> Result<Vec<SiteMetrics>> {
    let (sites, bundle) = read_bundle_csv(&args.bundle)?;
    let mut out = Vec::with_capacity(args.data.len());
    for spec in &args.data {
        let (site, path) = split_spec(spec);
        let study = read_study_csv(&path, &site, &args.response)?;
        let (beta, which) = match sites.iter().position(|s| *s == site) {
            Some(k) => (bundle.site_beta(k), "site"),
            None => (bundle.mu().clone(), "shared"),
        };
        if beta.len() != study.p() {
            return Err(shir_core::ShirError::SiteMismatch {
                site,
                reason: format!("data has {} columns with intercept, coefficients have {}", study.p(), beta.len()),
            });
        }
        let eta = study.x() * &beta;
        let y = study.y();
        let mean: Vec<f64> = match args.family {
            LossFamily::Logistic => eta.iter().map(|&e| sigmoid(e)).collect(),
            LossFamily::SquaredError => eta.iter().copied().collect(),
        };
        let n = study.n();
        let mse = mean.iter().zip(y.iter()).map(|(m, y)| (m - y).powi(2)).sum::<f64>() / n as f64;
        let (accuracy, auc) = match args.family {
            LossFamily::Logistic => {
                let hits = mean.iter().zip(y.iter()).filter(|(m, y)| (**m >= 0.5) == (**y == 1.0)).count();
                (Some(hits as f64 / n as f64), auc(eta.as_slice(), y.as_slice()))
            }
            LossFamily::SquaredError => (None, None),
        };
        out.push(SiteMetrics {
            loss: empirical_loss(&study, &beta, args.family)?,
            site,
            coefficients: which,
            n,
            mse,
            accuracy,
            auc,
        });
    }
    write_metrics(&args.out, &out)?;
    Ok(out)
}

fn write_metrics(dir: &Path, rows: &[SiteMetrics]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

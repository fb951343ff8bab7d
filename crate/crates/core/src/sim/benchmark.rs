//! Replication driver: every requested estimator on freshly generated sites,
//! errors against the truth, ratios against the pooled fit.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::generate::{rng_for, site_name, SiteModel};
use super::{stream_id, Mechanism, Method, SimSetting};
use crate::aggregator::{CoefficientBundle, PenaltyConfig};
use crate::baselines::ipd::{ipd_lambda_grid, select_ipd_by_gic};
use crate::baselines::{select_debias_by_gic, DebiasSite, SmaOptions, SmaPrepared, ThresholdKind};
use crate::error::{Result, ShirError};
use crate::glm::{LossFamily, StudyData};
use crate::local::lasso::default_lambda_grid as local_grid;
use crate::local::{cross_validate_lambda, summarize, LocalFit, LocalSummary, DEFAULT_GRID_RATIO};
use crate::tuning::{default_lambda_grid, gic_search};

const FAMILY: LossFamily = LossFamily::Logistic;

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub rep: usize,
    pub method: Method,
    /// `‖β̂ − β₀‖₁` over every site and coordinate; absent for the dense mechanism.
    pub aee: Option<f64>,
    /// `(Σₘ‖Xₘβ̂ₘ − ηₘ‖²)^{1/2}`, on the generating design or, for the dense
    /// mechanism, on held-out draws.
    pub pe: Option<f64>,
    pub raee: Option<f64>,
    pub rpe: Option<f64>,
    pub tpr: Option<f64>,
    pub fdr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub rows: Vec<MetricReport>,
    /// Largest KKT residual over all converged aggregator solves in the
    /// tuning sweep of this replication.
    pub shir_kkt_max: Option<f64>,
}

/// Mean and Monte-Carlo standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub se: f64,
}

fn moments(values: &[f64]) -> Option<Moments> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let se = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::NAN
    };
    Some(Moments { mean, se })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub succeeded: usize,
    pub failed: usize,
    pub aee: Option<Moments>,
    pub pe: Option<Moments>,
    pub raee: Option<Moments>,
    pub rpe: Option<Moments>,
    pub tpr: Option<Moments>,
    pub fdr: Option<Moments>,
}

impl MethodSummary {
    fn from_rows(method: Method, rows: &[&MetricReport]) -> Self {
        let pick = |f: fn(&MetricReport) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            moments(&v)
        };
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        Self {
            method,
            succeeded: rows.len() - failed,
            failed,
            aee: pick(|r| r.aee),
            pe: pick(|r| r.pe),
            raee: pick(|r| r.raee),
            rpe: pick(|r| r.rpe),
            tpr: pick(|r| r.tpr),
            fdr: pick(|r| r.fdr),
        }
    }

    fn metrics(&self) -> [(&'static str, Option<Moments>); 6] {
        [
            ("aee", self.aee),
            ("pe", self.pe),
            ("raee", self.raee),
            ("rpe", self.rpe),
            ("tpr", self.tpr),
            ("fdr", self.fdr),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub setting: SimSetting,
    pub methods: Vec<Method>,
    pub replications: Vec<ReplicationOutcome>,
    pub summaries: Vec<MethodSummary>,
}

#[derive(Serialize)]
struct SummaryRow {
    method: Method,
    metric: &'static str,
    mean: f64,
    se: f64,
    succeeded: usize,
    failed: usize,
}

#[derive(Serialize)]
struct LongRow {
    rep: usize,
    method: Method,
    metric: &'static str,
    value: f64,
}

impl BenchmarkReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn rows(&self) -> impl Iterator<Item = &MetricReport> {
        self.replications.iter().flat_map(|r| r.rows.iter())
    }

    /// Largest aggregator KKT residual over the whole run.
    pub fn shir_kkt_max(&self) -> Option<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.shir_kkt_max)
            .reduce(f64::max)
    }

    /// Writes `replications.csv`, `summary.csv` and `long.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
        for r in self.rows() {
            w.serialize(r)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        for s in &self.summaries {
            for (metric, m) in s.metrics() {
                if let Some(m) = m {
                    w.serialize(SummaryRow {
                        method: s.method,
                        metric,
                        mean: m.mean,
                        se: m.se,
                        succeeded: s.succeeded,
                        failed: s.failed,
                    })?;
                }
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("long.csv"))?;
        for r in self.rows() {
            let vals = [
                ("aee", r.aee),
                ("pe", r.pe),
                ("raee", r.raee),
                ("rpe", r.rpe),
                ("tpr", r.tpr),
                ("fdr", r.fdr),
            ];
            for (metric, v) in vals {
                if let Some(value) = v {
                    w.serialize(LongRow {
                        rep: r.rep,
                        method: r.method,
                        metric,
                        value,
                    })?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything one replication's estimators see, plus the evaluation targets.
struct Replication {
    studies: Vec<StudyData>,
    /// Rows on which prediction error is measured and their true predictors.
    eval: Vec<(StudyData, DVector<f64>)>,
    beta0: Option<Vec<DVector<f64>>>,
}

fn generate(setting: &SimSetting, rep: usize) -> Result<Replication> {
    let mut studies = Vec::with_capacity(setting.sites);
    let mut eval = Vec::with_capacity(setting.sites);
    let mut beta0 = Vec::with_capacity(setting.sites);
    for m in 1..=setting.sites {
        let model = SiteModel::for_replication(setting, rep, m)?;
        let mut rng = rng_for(setting.seed, stream_id(rep, m, 1));
        let (study, eta) = model.draw(&site_name(m), setting.n, &mut rng)?;
        if setting.mechanism == Mechanism::Dense {
            let mut rng = rng_for(setting.seed, stream_id(rep, m, 2));
            eval.push(model.draw(&site_name(m), setting.n, &mut rng)?);
        } else {
            eval.push((study.clone(), eta));
        }
        studies.push(study);
        if let Some(b) = model.beta0 {
            beta0.push(b);
        }
    }
    Ok(Replication {
        studies,
        eval,
        beta0: setting.mechanism.has_truth().then_some(beta0),
    })
}

fn local_fits(setting: &SimSetting, rep: usize, studies: &[StudyData]) -> Result<Vec<LocalFit>> {
    studies
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let grid = local_grid(s, FAMILY, setting.local_grid_len, DEFAULT_GRID_RATIO)?;
            let seed = setting.seed ^ stream_id(rep, k + 1, 3).rotate_left(32);
            cross_validate_lambda(s, FAMILY, setting.folds, &grid, seed).map_err(|e| e.at_site(s.site_id()))
        })
        .collect()
}

struct Fitted {
    bundle: CoefficientBundle,
    kkt_max: Option<f64>,
}

fn fit_method(
    method: Method,
    setting: &SimSetting,
    rep: &Replication,
    local: &std::result::Result<(Vec<LocalFit>, Vec<LocalSummary>), String>,
) -> Result<Fitted> {
    let lambda_g_grid = PenaltyConfig::lambda_g_grid(setting.sites);
    let local = || local.as_ref().map_err(|e| ShirError::InvalidInput(format!("local fit failed: {e}")));
    match method {
        Method::Ipd => {
            let grid = ipd_lambda_grid(&rep.studies, FAMILY, &lambda_g_grid)?;
            let best = select_ipd_by_gic(&rep.studies, FAMILY, &grid, &lambda_g_grid, setting.schedule)?;
            Ok(Fitted {
                bundle: best.bundle,
                kkt_max: None,
            })
        }
        Method::Shir => {
            let (_, sums) = local()?;
            let grid = default_lambda_grid(sums, &lambda_g_grid)?;
            let search = gic_search(sums, &grid, &lambda_g_grid, setting.schedule)?;
            let kkt_max = search
                .table
                .iter()
                .filter(|r| r.error.is_none())
                .map(|r| r.kkt)
                .reduce(f64::max);
            Ok(Fitted {
                bundle: search.best.bundle,
                kkt_max,
            })
        }
        Method::Debias => {
            let (fits, sums) = local()?;
            let sites = rep
                .studies
                .iter()
                .zip(fits)
                .map(|(s, f)| DebiasSite::new(s, FAMILY, f).map_err(|e| e.at_site(s.site_id())))
                .collect::<Result<Vec<_>>>()?;
            let (_, bundle) = select_debias_by_gic(&sites, sums, ThresholdKind::Soft, setting.schedule)?;
            Ok(Fitted { bundle, kkt_max: None })
        }
        Method::Sma => {
            let opts = SmaOptions::default();
            let prepared = SmaPrepared::new(&rep.studies, FAMILY, &opts)?;
            let (_, bundle) = prepared.select_by_gic(setting.schedule, &opts)?;
            Ok(Fitted { bundle, kkt_max: None })
        }
    }
}

fn estimation_error(bundle: &CoefficientBundle, beta0: &[DVector<f64>]) -> f64 {
    beta0
        .iter()
        .enumerate()
        .map(|(m, b)| (bundle.site_beta(m) - b).abs().sum())
        .sum()
}

fn prediction_error(bundle: &CoefficientBundle, eval: &[(StudyData, DVector<f64>)]) -> f64 {
    eval.iter()
        .enumerate()
        .map(|(m, (s, eta))| (s.x() * bundle.site_beta(m) - eta).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// `(TPR, FDR)` of the nonzero pattern of `β⁽ᵐ⁾_j`, `j ≥ 1`, over all sites.
fn support_rates(bundle: &CoefficientBundle, beta0: &[DVector<f64>]) -> (f64, f64) {
    let (mut tp, mut truth, mut found) = (0usize, 0usize, 0usize);
    for (m, b) in beta0.iter().enumerate() {
        let est = bundle.site_beta(m);
        for j in 1..b.len() {
            let t = b[j] != 0.0;
            let e = est[j] != 0.0;
            truth += usize::from(t);
            found += usize::from(e);
            tp += usize::from(t && e);
        }
    }
    let tpr = if truth == 0 { 1.0 } else { tp as f64 / truth as f64 };
    let fdr = if found == 0 { 0.0 } else { (found - tp) as f64 / found as f64 };
    (tpr, fdr)
}

fn run_replication(setting: &SimSetting, methods: &[Method], rep_idx: usize) -> ReplicationOutcome {
    let failed_all = |e: ShirError| ReplicationOutcome {
        rep: rep_idx,
        rows: methods
            .iter()
            .map(|&method| MetricReport {
                rep: rep_idx,
                method,
                aee: None,
                pe: None,
                raee: None,
                rpe: None,
                tpr: None,
                fdr: None,
                error: Some(e.to_string()),
            })
            .collect(),
        shir_kkt_max: None,
    };
    let rep = match generate(setting, rep_idx) {
        Ok(r) => r,
        Err(e) => return failed_all(e),
    };
    let local = if methods.iter().any(|m| matches!(m, Method::Shir | Method::Debias)) {
        local_fits(setting, rep_idx, &rep.studies)
            .and_then(|fits| {
                let sums = rep
                    .studies
                    .iter()
                    .zip(&fits)
                    .map(|(s, f)| summarize(s, f, FAMILY))
                    .collect::<Result<Vec<_>>>()?;
                Ok((fits, sums))
            })
            .map_err(|e| e.to_string())
    } else {
        Err("not requested".to_string())
    };

    let mut rows = Vec::with_capacity(methods.len());
    let mut shir_kkt_max = None;
    for &method in methods {
        let start = Instant::now();
        let fitted = fit_method(method, setting, &rep, &local);
        log::info!(
            "replication {rep_idx}, {method}: {:.1}s{}",
            start.elapsed().as_secs_f64(),
            fitted.as_ref().err().map(|e| format!(" (failed: {e})")).unwrap_or_default()
        );
        let row = match fitted {
            Ok(f) => {
                if method == Method::Shir {
                    shir_kkt_max = f.kkt_max;
                }
                let (aee, tpr, fdr) = match &rep.beta0 {
                    Some(b0) => {
                        let (tpr, fdr) = support_rates(&f.bundle, b0);
                        (Some(estimation_error(&f.bundle, b0)), Some(tpr), Some(fdr))
                    }
                    None => (None, None, None),
                };
                MetricReport {
                    rep: rep_idx,
                    method,
                    aee,
                    pe: Some(prediction_error(&f.bundle, &rep.eval)),
                    raee: None,
                    rpe: None,
                    tpr,
                    fdr,
                    error: None,
                }
            }
            Err(e) => MetricReport {
                rep: rep_idx,
                method,
                aee: None,
                pe: None,
                raee: None,
                rpe: None,
                tpr: None,
                fdr: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    let ipd = rows
        .iter()
        .find(|r| r.method == Method::Ipd && r.error.is_none())
        .map(|r| (r.aee, r.pe));
    if let Some((ipd_aee, ipd_pe)) = ipd {
        let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => Some(a / b),
            _ => None,
        };
        for r in &mut rows {
            if r.method == Method::Ipd {
                r.raee = r.aee.map(|_| 1.0);
                r.rpe = r.pe.map(|_| 1.0);
            } else {
                r.raee = ratio(r.aee, ipd_aee);
                r.rpe = ratio(r.pe, ipd_pe);
            }
        }
    }
    ReplicationOutcome {
        rep: rep_idx,
        rows,
        shir_kkt_max,
    }
}

/// Runs every replication (in parallel) and aggregates per method. A method
/// failing on a replication is recorded in its row and excluded from that
/// method's averages.
pub fn run_benchmark(setting: &SimSetting, methods: &[Method]) -> Result<BenchmarkReport> {
    setting.validate()?;
    if !methods.contains(&Method::Ipd) {
        return Err(ShirError::InvalidInput(
            "the pooled fit (ipd) must be among the methods: ratios are taken against it".into(),
        ));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();

    let replications: Vec<ReplicationOutcome> = (0..setting.replications)
        .into_par_iter()
        .map(|r| run_replication(setting, &methods, r))
        .collect();

    let summaries = methods
        .iter()
        .map(|&m| {
            let rows: Vec<&MetricReport> = replications
                .iter()
                .flat_map(|r| r.rows.iter())
                .filter(|r| r.method == m)
                .collect();
            MethodSummary::from_rows(m, &rows)
        })
        .collect();
    Ok(BenchmarkReport {
        setting: setting.clone(),
        methods,
        replications,
        summaries,
    })
}

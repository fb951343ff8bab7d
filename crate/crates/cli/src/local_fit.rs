//! `shir local-fit`: one site's raw data in, its summary envelope out.

use std::fs;
use std::path::PathBuf;

use shir_core::local::lasso::default_lambda_grid;
use shir_core::local::{DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO};
use shir_core::transport::write_envelope_file;
use shir_core::{cross_validate_lambda, summarize, LocalSummary, LossFamily, Result};

use crate::data::{default_site_id, read_study_csv};

#[derive(Debug, Clone)]
pub struct LocalFitArgs {
    pub data: PathBuf,
    pub site_id: Option<String>,
    pub response: String,
    pub family: LossFamily,
    pub folds: usize,
    pub seed: u64,
    pub lambda_grid: Option<Vec<f64>>,
    pub out: PathBuf,
}

pub fn run(args: &LocalFitArgs) -> Result<(PathBuf, LocalSummary)> {
    let site = args.site_id.clone().unwrap_or_else(|| default_site_id(&args.data));
    let study = read_study_csv(&args.data, &site, &args.response)?;
    let grid = match &args.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(&study, args.family, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO)?,
    };
    let fit = cross_validate_lambda(&study, args.family, args.folds, &grid, args.seed)?;
    let summary = summarize(&study, &fit, args.family)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("{site}.shir"));
    write_envelope_file(&path, &summary)?;
    log::info!(
        "site {site}: n = {}, p = {}, lambda = {:.4e}",
        summary.n,
        summary.p,
        summary.lambda_m
    );
    Ok((path, summary))
}

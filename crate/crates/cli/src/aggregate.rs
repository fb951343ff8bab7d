//! `shir aggregate`: envelopes in, selected coefficients and the criterion
//! table out. This file only ever handles released summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use shir_core::aggregator::GammaSchedule;
use shir_core::transport::{collect, CollectOptions, RunManifest, SummarySource};
use shir_core::tuning::{default_lambda_grid, gic_search, GicSearch};
use shir_core::{LocalSummary, PenaltyConfig, Result, ShirError};

use crate::coefficients::write_bundle_csv;

#[derive(Debug, Clone)]
pub struct AggregateArgs {
    pub sources: Vec<String>,
    pub manifest: Option<PathBuf>,
    pub schedule: Option<GammaSchedule>,
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_g_grid: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

pub struct AggregateOutput {
    pub out_dir: PathBuf,
    pub summaries: Vec<LocalSummary>,
    pub search: GicSearch,
}

pub fn run(args: &AggregateArgs) -> Result<AggregateOutput> {
    let manifest = args.manifest.as_deref().map(RunManifest::load).transpose()?;
    let mut sources: Vec<SummarySource> = manifest.as_ref().map(|m| m.sources()).unwrap_or_default();
    sources.extend(args.sources.iter().map(|s| SummarySource::parse(s)));
    if sources.is_empty() {
        return Err(ShirError::InvalidInput("no envelopes given".into()));
    }
    let schedule = args
        .schedule
        .or(manifest.as_ref().map(|m| m.schedule))
        .unwrap_or_default();
    let summaries = collect(&sources, &CollectOptions::default())?;

    let lambda_g_grid = args
        .lambda_g_grid
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.lambda_g_grid.clone()))
        .unwrap_or_else(|| PenaltyConfig::lambda_g_grid(summaries.len()));
    let lambda_grid = match args
        .lambda_grid
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.lambda_grid.clone()))
    {
        Some(g) => g,
        None => default_lambda_grid(&summaries, &lambda_g_grid)?,
    };
    let search = gic_search(&summaries, &lambda_grid, &lambda_g_grid, schedule)?;

    let out_dir = args
        .out
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.out_dir.as_ref().map(|d| m.base_dir.join(d))))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let ids: Vec<String> = summaries.iter().map(|s| s.site_id.clone()).collect();
    write_bundle_csv(&out_dir.join("coefficients.csv"), &ids, &search.best.bundle)?;
    write_table(&out_dir.join("gic_table.csv"), &search)?;
    fs::write(out_dir.join("selection.txt"), selection_text(&search, schedule))?;
    Ok(AggregateOutput {
        out_dir,
        summaries,
        search,
    })
}

fn write_table(path: &std::path::Path, search: &GicSearch) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "lambda", "lambda_g", "deviance", "df", "gic", "kkt", "active_mu", "active_alpha", "error",
    ])?;
    for r in &search.table {
        w.write_record([
            format!("{:?}", r.lambda),
            format!("{:?}", r.lambda_g),
            format!("{:?}", r.deviance),
            format!("{:?}", r.df),
            format!("{:?}", r.gic),
            format!("{:?}", r.kkt),
            r.active_mu.to_string(),
            r.active_alpha.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn selection_text(search: &GicSearch, schedule: GammaSchedule) -> String {
    let b = &search.best;
    let mut s = String::new();
    let _ = writeln!(s, "schedule={}", schedule.name());
    let _ = writeln!(s, "lambda={:e}", b.lambda);
    let _ = writeln!(s, "lambda_g={:e}", b.lambda_g);
    let _ = writeln!(s, "gamma={:e}", b.gamma);
    let _ = writeln!(s, "deviance={:e}", b.deviance);
    let _ = writeln!(s, "df={:.6}", b.df);
    let _ = writeln!(s, "gic={:e}", b.gic);
    let _ = writeln!(s, "kkt={:e}", b.kkt);
    let _ = writeln!(s, "active_mu={:?}", b.bundle.active_mu());
    let _ = writeln!(s, "active_alpha={:?}", b.bundle.active_alpha());
    s
}

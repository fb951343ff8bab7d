//! `shir simulate`: benchmark replications to CSV tables.

use std::fs;
use std::path::PathBuf;

use shir_core::sim::{run_benchmark, BenchmarkReport, Method, SimSetting};
use shir_core::Result;

pub fn run(setting: &SimSetting, methods: &[Method], out: &PathBuf) -> Result<BenchmarkReport> {
    let report = run_benchmark(setting, methods)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("setting.toml"), setting.to_toml())?;
    report.write_csv(out)?;
    Ok(report)
}

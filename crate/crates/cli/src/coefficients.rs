//! Coefficient table: one row per design coordinate, columns `index`, `mu`,
//! then `alpha:<site>` and `beta:<site>` for every site in bundle order.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use shir_core::{CoefficientBundle, Result, ShirError};

pub fn write_bundle_csv(path: &Path, site_ids: &[String], bundle: &CoefficientBundle) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string(), "mu".to_string()];
    header.extend(site_ids.iter().map(|s| format!("alpha:{s}")));
    header.extend(site_ids.iter().map(|s| format!("beta:{s}")));
    w.write_record(&header)?;
    let m = bundle.num_sites();
    for j in 0..bundle.p() {
        let mut rec = vec![j.to_string(), fmt(bundle.mu()[j])];
        rec.extend((0..m).map(|k| fmt(bundle.alpha()[(k, j)])));
        rec.extend((0..m).map(|k| fmt(bundle.beta()[(k, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest text that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_bundle_csv(path: &Path) -> Result<(Vec<String>, CoefficientBundle)> {
    let bad = |msg: String| ShirError::InvalidInput(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("index") || headers.get(1) != Some("mu") {
        return Err(bad("expected leading columns index,mu".into()));
    }
    let sites: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("alpha:").map(str::to_string))
        .collect();
    let m = sites.len();
    if m == 0 || headers.len() != 2 + 2 * m {
        return Err(bad("malformed site columns".into()));
    }
    let mut mu = Vec::new();
    let mut alpha = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| bad(format!("row {}: {:?} is not a number", row + 1, &rec[k])))
        };
        if num(0)? != row as f64 {
            return Err(bad(format!("row {} is out of order", row + 1)));
        }
        mu.push(num(1)?);
        for k in 0..m {
            alpha.push(num(2 + k)?);
        }
    }
    let p = mu.len();
    // `alpha` was filled coordinate by coordinate: a p × m row-major block.
    let alpha = DMatrix::from_row_slice(p, m, &alpha).transpose();
    let bundle = CoefficientBundle::from_parts(DVector::from_vec(mu), alpha)?;
    Ok((sites, bundle))
}

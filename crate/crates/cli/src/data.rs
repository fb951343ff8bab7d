//! Raw site data from CSV. Only `local-fit` and `evaluate` read these files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use shir_core::{Result, ShirError, StudyData};

/// Reads a headed CSV whose `response` column is the outcome and whose
/// remaining columns, in file order, are covariates. The intercept column is
/// added here, so the file must not contain one.
pub fn read_study_csv(path: &Path, site_id: &str, response: &str) -> Result<StudyData> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let y_col = headers.iter().position(|h| h == response).ok_or_else(|| {
        ShirError::InvalidInput(format!("{}: no response column {response:?}", path.display()))
    })?;
    let p_cov = headers.len() - 1;
    let mut y = Vec::new();
    let mut cov = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                ShirError::InvalidInput(format!(
                    "{}: row {}, column {:?}: {field:?} is not a number",
                    path.display(),
                    row + 1,
                    &headers[k]
                ))
            })?;
            if k == y_col {
                y.push(v);
            } else {
                cov.push(v);
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(ShirError::InvalidInput(format!("{}: no data rows", path.display())));
    }
    let covariates = DMatrix::from_row_slice(n, p_cov, &cov);
    StudyData::from_covariates(site_id, &covariates, DVector::from_vec(y))
}

/// Site id for a file: its stem.
pub fn default_site_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "site".to_string())
}

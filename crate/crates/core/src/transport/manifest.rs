use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::aggregator::GammaSchedule;
use crate::error::{Result, ShirError};
use crate::transport::socket::SummarySource;

/// Aggregation run description, read from TOML:
///
/// ```toml
/// sites = ["site-a.shir", "tcp://10.0.0.2:7400"]
/// schedule = "bic"
/// lambda_g_grid = [0.25, 0.5]
/// seed = 1
/// out_dir = "results"
/// ```
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub sites: Vec<String>,
    #[serde(default)]
    pub schedule: GammaSchedule,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_g_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Directory that relative file sources are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: RunManifest = toml::from_str(text).map_err(|e| ShirError::Manifest(e.to_string()))?;
        if m.sites.is_empty() {
            return Err(ShirError::Manifest("no sites listed".into()));
        }
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn sources(&self) -> Vec<SummarySource> {
        self.sites
            .iter()
            .map(|s| match SummarySource::parse(s) {
                SummarySource::File(p) if p.is_relative() => SummarySource::File(self.base_dir.join(p)),
                other => other,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults_and_resolves_paths() {
        let m = RunManifest::parse(
            "sites = [\"a.shir\", \"tcp://h:1\", \"/abs/b.shir\"]\nschedule = \"ric\"\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(m.schedule, GammaSchedule::Ric);
        assert_eq!(m.seed, 0);
        assert_eq!(
            m.sources(),
            vec![
                SummarySource::File("/data/a.shir".into()),
                SummarySource::Tcp("h:1".into()),
                SummarySource::File("/abs/b.shir".into()),
            ]
        );
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(RunManifest::parse("sites = []", Path::new(".")).is_err());
        assert!(RunManifest::parse("sites = [\"a\"]\nbogus = 1", Path::new(".")).is_err());
        assert!(RunManifest::parse("sites = [\"a\"]\nschedule = \"xic\"", Path::new(".")).is_err());
    }
}

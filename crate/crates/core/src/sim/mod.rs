//! Synthetic multi-site benchmark: the three generating mechanisms, the
//! replication driver and its metric tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregator::GammaSchedule;
use crate::error::ShirError;
use crate::local::{DEFAULT_FOLDS, DEFAULT_GRID_LEN};

pub mod benchmark;
pub mod covariance;
pub mod generate;

pub use benchmark::{
    run_benchmark, BenchmarkReport, MethodSummary, MetricReport, ReplicationOutcome,
};
pub use covariance::{ar1, gen_covariance, site_correlation, sparse_loadings};
pub use generate::{gen_study, true_coefficients, SiteModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// Sparse precision, correctly specified logistic model, strong signal.
    #[serde(rename = "i")]
    Strong,
    /// As `Strong` with smaller signal magnitudes.
    #[serde(rename = "ii")]
    Weak,
    /// Dense precision and a misspecified (nonlinear) linear predictor.
    #[serde(rename = "iii")]
    Dense,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Self::Strong => "i",
            Self::Weak => "ii",
            Self::Dense => "iii",
        }
    }

    /// Whether the generating coefficients are exactly sparse and known.
    pub fn has_truth(self) -> bool {
        self != Self::Dense
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = ShirError;

    fn from_str(s: &str) -> Result<Self, ShirError> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" | "strong" | "i-strong" => Ok(Self::Strong),
            "ii" | "2" | "weak" | "ii-weak" => Ok(Self::Weak),
            "iii" | "3" | "dense" | "iii-dense-misspec" => Ok(Self::Dense),
            other => Err(ShirError::InvalidInput(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipd,
    Shir,
    Debias,
    Sma,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ipd, Method::Shir, Method::Debias, Method::Sma];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ipd => "ipd",
            Self::Shir => "shir",
            Self::Debias => "debias",
            Self::Sma => "sma",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ShirError;

    fn from_str(s: &str) -> Result<Self, ShirError> {
        match s.to_ascii_lowercase().as_str() {
            "ipd" => Ok(Self::Ipd),
            "shir" => Ok(Self::Shir),
            "debias" | "debias_lnb" | "debias-lnb" => Ok(Self::Debias),
            "sma" => Ok(Self::Sma),
            other => Err(ShirError::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// One benchmark configuration. `p` counts covariates; designs carry `p + 1`
/// columns with the intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSetting {
    pub mechanism: Mechanism,
    pub sites: usize,
    pub p: usize,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Multiplies every generating coefficient; 1 reproduces the mechanism.
    pub signal_scale: f64,
    pub folds: usize,
    /// Length of each site's cross-validation grid.
    pub local_grid_len: usize,
    pub schedule: GammaSchedule,
}

impl Default for SimSetting {
    fn default() -> Self {
        Self::desk(Mechanism::Strong)
    }
}

impl SimSetting {
    /// Reads a TOML table; missing keys take the desk-scale defaults.
    pub fn from_toml(text: &str) -> crate::Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| ShirError::Manifest(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    /// Desk-scale defaults: 4 sites, 100 covariates, 400 rows each, 20 replications.
    pub fn desk(mechanism: Mechanism) -> Self {
        Self {
            mechanism,
            sites: 4,
            p: 100,
            n: 400,
            replications: 20,
            seed: 1,
            signal_scale: 1.0,
            folds: DEFAULT_FOLDS,
            local_grid_len: DEFAULT_GRID_LEN,
            schedule: GammaSchedule::Bic,
        }
    }

    /// The large configuration: 8 sites and 1500 covariates, 200 replications.
    pub fn full(mechanism: Mechanism) -> Self {
        Self {
            sites: 8,
            p: 1500,
            replications: 200,
            ..Self::desk(mechanism)
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let min_p = if self.mechanism == Mechanism::Dense { 51 } else { 9 };
        if self.p < min_p {
            return Err(ShirError::InvalidInput(format!(
                "mechanism {} needs p >= {min_p}, got {}",
                self.mechanism, self.p
            )));
        }
        if self.sites < 2 {
            return Err(ShirError::InvalidInput(format!("need at least 2 sites, got {}", self.sites)));
        }
        if self.n < self.folds.max(2) {
            return Err(ShirError::InvalidInput(format!(
                "n = {} is too small for {} folds",
                self.n, self.folds
            )));
        }
        if !(self.signal_scale.is_finite()) {
            return Err(ShirError::InvalidInput("signal scale must be finite".into()));
        }
        Ok(())
    }
}

/// Seed of an independent generator stream for one `(replication, site, purpose)`.
pub(crate) fn stream_id(rep: usize, site: usize, purpose: u64) -> u64 {
    ((rep as u64) << 24) | ((site as u64) << 4) | purpose
}

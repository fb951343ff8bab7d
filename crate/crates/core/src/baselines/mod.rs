//! Comparator estimators: the pooled individual-data fit, sparse
//! meta-analysis, and thresholded averages of debiased local fits.

pub mod debias;
pub mod ipd;
pub mod sma;

pub use debias::{
    fit_debias_lnb, nodewise_precision, select_debias_by_gic, DebiasSite, PrecisionEstimate,
    ThresholdKind, ThresholdRule,
};
pub use ipd::{fit_ipd, fit_ipd_with, select_ipd_by_gic, IpdOptions};
pub use sma::{fit_sma, SmaOptions, SmaPrepared};

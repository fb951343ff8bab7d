//! Moving summaries from sites to the aggregator.

pub mod envelope;
pub mod manifest;
pub mod socket;

pub use envelope::{decode, encode, read_envelope_file, write_envelope_file, EnvelopeError};
pub use manifest::RunManifest;
pub use socket::{collect, serve_site, CollectOptions, SummarySource};

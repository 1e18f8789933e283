//! Analytical latency model and dataset statistics.
//!
//! [`model_latency`] prices a connection setup from a node's three RTT
//! measurements; [`savings`] compares the relayed setup against going
//! direct. [`dataset_stats`] and [`emit_cdf`] turn a whole dataset of such
//! triples into threshold fractions and empirical CDFs ready for plotting.

mod csv_io;
mod model;
mod stats;

pub use csv_io::{
    read_raw_samples, read_triples, read_triples_path, write_cdf, write_triples,
    write_triples_path, CSV_HEADER, RAW_CSV_HEADER,
};
pub use model::{model_latency, savings, ModelResult, RttTriple, Savings, Scenario};
pub use stats::{
    cdf_points, dataset_stats, emit_cdf, margin_fixture, CdfPoint, Metric, StatsReport,
    ThresholdFraction, FAST_DNS_BELOW_MS, MARGIN_THRESHOLDS_MS, SAVINGS_THRESHOLDS_NO_RETRY_MS,
    SAVINGS_THRESHOLDS_RETRY_MS,
};

/// Errors across the model, statistics, and CSV layers.
#[derive(Debug, thiserror::Error)]
pub enum LatModelError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("milliseconds must be finite and nonnegative, got {0}")]
    BadValue(f64),
    #[error("csv header must be {expected:?}, got {got:?}")]
    BadHeader { expected: &'static str, got: String },
    #[error("row {row}: {problem}")]
    BadRow { row: usize, problem: String },
    #[error("node {node_id:?} has no {edge} samples")]
    IncompleteNode { node_id: String, edge: &'static str },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

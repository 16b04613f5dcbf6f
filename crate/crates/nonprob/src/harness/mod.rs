//! Seeded Monte Carlo replication over synthetic populations.

mod config;
pub mod presets;
mod run;
mod summary;

pub use config::*;
pub use run::{draw_s, run_scenario, Point, ReplicateOutput, SlotResult};
pub use summary::{ErrorCount, McSummary, MetricSummary, PointSummary, SUMMARY_HEADER, Z_95};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nonprob_core::Error),
    #[error("estimator {estimator} failed in every replicate at N = {n} ({kinds})")]
    AllFailed { estimator: String, n: usize, kinds: String },
    #[error("internal error: {0}")]
    Internal(String),
}

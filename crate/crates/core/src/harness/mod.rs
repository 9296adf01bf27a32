//! Config-driven pipeline, persistence and analyses.

pub mod analysis;
pub mod config;
pub mod ledger;
pub mod pipeline;

pub use analysis::{correlate_prediction_vs_attack, export_heatmap, pearson, HeatmapMode};
pub use config::ExperimentConfig;
pub use ledger::{Ledger, LedgerRow};
pub use pipeline::{run_pipeline, Pipeline, Stage};

//! Experiment configuration, drivers and report emission behind the CLI.

pub mod config;
pub mod experiments;
pub mod report;
pub mod verify;

pub use config::{ExperimentConfig, Format, Suite, Tolerances};
pub use experiments::{run_ap_scan, run_cheeger, run_comparison, run_gap, ComparisonRow};
pub use verify::run_verify;

//! Experiment orchestration: config, benchmark runs and report files.

mod config;
mod report;
mod run;

pub use config::{AssayConfig, ExperimentConfig, Family, GridConfig, TrainingConfig, UqConfig, CONFIG_VERSION};
pub use report::{emit_report, render_summary, REPORT_FILES};
pub use run::{
    config_hash, load_assay, prob_score, run_experiment, AssaySummary, ExperimentReport, FailureRow, LongRow, MetricRow,
    Provenance, SelectionRow, ShiftRow, SCORE_CLAMP,
};

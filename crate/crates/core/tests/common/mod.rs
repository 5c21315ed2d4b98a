#![allow(dead_code)]

use std::fs;
use std::path::Path;

use uqshift::harness::{emit_report, ExperimentConfig, ExperimentReport, REPORT_FILES};

/// Twin synthetic assays. They share the generator seed and differ only in
/// the descriptor drift, which in the shifted twin hits the last span alone,
/// so the calibration fold looks like training data while the test fold does
/// not.
pub const TWIN_ASSAYS: &str = r#"
[[assays]]
name = "noshift"
synth_seed = 11
synth = { records_per_span = 400, drift = 0.0 }

[[assays]]
name = "shift"
synth_seed = 11
synth = { records_per_span = 400, drift = 0.8, drift_onset = 4 }
"#;

/// Small networks and early stopping settings shared by the quick runs.
pub const SMALL_TRAINING: &str = r#"
[training]
max_epochs = 40
patience_early_stop = 5
patience_scheduler = 3
learning_rate = 0.001
batch_size = 64
"#;

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("test config parses")
}

/// A single tiny synthetic assay for harness plumbing tests.
pub fn tiny_config(models: &str, calibrators: &str, reps: usize) -> ExperimentConfig {
    config(&format!(
        r#"
version = 1
master_seed = 3
n_repetitions = {reps}
settings = [3]
models = {models}
calibrators = {calibrators}

[training]
max_epochs = 8
patience_early_stop = 2
patience_scheduler = 1
learning_rate = 0.003
batch_size = 32

[grid.mlp]
hidden_dim = [16]
n_hidden_layers = [2]
dropout_rate = [0.0, 0.2]
weight_decay = [0.0]
decreasing_dims = [false]
scheduler_factor = [0.5]

[grid.rf]
n_estimators = [10]
max_depth = [8]

[uq]
ensemble_members = 2
mc_passes = 8
bnn_valid_samples = 4
bnn_infer_samples = 8

[[assays]]
name = "tiny"
synth_seed = 5
synth = {{ fp_len = 256, records_per_span = 60, drift = 0.3, support_size = 24 }}
"#
    ))
}

/// Emits `report` into `dir` and returns the bytes of every report file.
pub fn emitted_bytes(report: &ExperimentReport, dir: &Path) -> Vec<(String, Vec<u8>)> {
    emit_report(report, dir).expect("report written");
    REPORT_FILES
        .iter()
        .map(|f| (f.to_string(), fs::read(dir.join(f)).expect("report file exists")))
        .collect()
}

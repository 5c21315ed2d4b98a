use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::run::{ExperimentReport, MetricRow};
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Files written by [`emit_report`].
pub const REPORT_FILES: [&str; 7] = [
    "shift.csv",
    "metrics.csv",
    "metrics_long.csv",
    "selections.csv",
    "failures.csv",
    "summary.md",
    "provenance.json",
];

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV tables, the markdown summary and the provenance block into
/// `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("shift.csv"),
        &report.shift,
        &[
            "assay",
            "setting",
            "n_train",
            "n_calib",
            "n_test",
            "label_shift",
            "mmd_sq",
            "mmd_norm",
            "calib_label_shift",
            "calib_mmd_sq",
            "calib_mmd_norm",
        ],
    )?;
    write_csv(
        &dir.join("metrics.csv"),
        &report.metrics,
        &["assay", "setting", "model", "calibrator", "metric", "mean", "std", "n_reps", "best_group"],
    )?;
    write_csv(
        &dir.join("metrics_long.csv"),
        &report.long,
        &["assay", "setting", "model", "calibrator", "rep", "metric", "value"],
    )?;
    write_csv(
        &dir.join("selections.csv"),
        &report.selections,
        &["assay", "setting", "model", "candidate", "params"],
    )?;
    write_csv(
        &dir.join("failures.csv"),
        &report.failures,
        &["assay", "setting", "model", "calibrator", "rep", "stage", "message"],
    )?;
    let summary = dir.join("summary.md");
    fs::write(&summary, render_summary(report)).map_err(|e| Error::io(&summary, e))?;
    let prov = dir.join("provenance.json");
    let mut json = serde_json::to_string_pretty(&report.provenance)?;
    json.push('\n');
    fs::write(&prov, json).map_err(|e| Error::io(&prov, e))
}

fn cell(row: &MetricRow) -> String {
    let text = if row.std.is_nan() {
        format!("{:.4}", row.mean)
    } else {
        format!("{:.4} ± {:.4}", row.mean, row.std)
    };
    if row.best_group {
        format!("**{text}**")
    } else {
        text
    }
}

/// Markdown tables per (assay, setting). Cells in the best group (the best
/// model and every model not significantly different from it) are bold.
pub fn render_summary(report: &ExperimentReport) -> String {
    let p = &report.provenance;
    let mut s = String::new();
    let _ = writeln!(s, "# Benchmark summary\n");
    let _ = writeln!(
        s,
        "uqshift {}, config sha256 `{}`, master seed {}, {} repetitions.\n",
        p.toolkit_version, p.config_sha256, p.master_seed, p.n_repetitions
    );
    let _ = writeln!(s, "Bold: best model per column, plus models not significantly different from it (Welch t-test, p >= 0.05).\n");

    let _ = writeln!(s, "## Distribution shift\n");
    let _ = writeln!(s, "| Assay | Setting | Train | Calib | Test | Label shift | MMD | Label shift (calib) | MMD (calib) |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for r in &report.shift {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
            r.assay, r.setting, r.n_train, r.n_calib, r.n_test, r.label_shift, r.mmd_norm, r.calib_label_shift, r.calib_mmd_norm
        );
    }

    let mut cells: Vec<(&str, usize)> = Vec::new();
    for r in &report.metrics {
        if !cells.contains(&(r.assay.as_str(), r.setting)) {
            cells.push((r.assay.as_str(), r.setting));
        }
    }
    for (assay, setting) in cells {
        let _ = writeln!(s, "\n## {assay}, setting {setting}\n");
        let _ = writeln!(s, "| Model | AUC | BCE | ACE |");
        let _ = writeln!(s, "|---|---|---|---|");
        let rows: Vec<&MetricRow> = report
            .metrics
            .iter()
            .filter(|r| r.assay == assay && r.setting == setting)
            .collect();
        let mut variants: Vec<String> = Vec::new();
        for r in &rows {
            if !variants.contains(&r.variant()) {
                variants.push(r.variant());
            }
        }
        for v in variants {
            let get = |m: Metric| {
                rows.iter()
                    .find(|r| r.variant() == v && r.metric == m)
                    .map_or_else(|| "n/a".to_string(), |r| cell(r))
            };
            let _ = writeln!(s, "| {v} | {} | {} | {} |", get(Metric::Auc), get(Metric::Bce), get(Metric::Ace));
        }
    }

    if !report.failures.is_empty() {
        let _ = writeln!(s, "\n## Failures\n");
        let _ = writeln!(s, "| Assay | Setting | Model | Calibrator | Rep | Stage | Message |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for f in &report.failures {
            let rep = f.rep.map_or_else(|| "-".to_string(), |r| r.to_string());
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {rep} | {} | {} |",
                f.assay,
                f.setting,
                f.model,
                f.calibrator,
                f.stage,
                f.message.replace('|', "\\|")
            );
        }
    }
    s
}

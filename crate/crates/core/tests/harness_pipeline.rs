mod common;

use std::collections::BTreeSet;

use uqshift::harness::{config_hash, render_summary, run_experiment, ExperimentConfig, LongRow};
use uqshift::metrics::Metric;
use uqshift::Error;

#[test]
fn single_mlp_cell_has_three_metric_rows_and_one_shift_row() {
    let cfg = common::tiny_config(r#"["mlp"]"#, r#"["none"]"#, 2);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.shift.len(), 1);
    assert_eq!(report.metrics.len(), 3);
    let metrics: Vec<Metric> = report.metrics.iter().map(|r| r.metric).collect();
    assert_eq!(metrics, Metric::REPORTED);
    for r in &report.metrics {
        assert_eq!((r.assay.as_str(), r.setting, r.model.as_str(), r.calibrator.as_str()), ("tiny", 3, "MLP", "none"));
        assert_eq!(r.n_reps, 2);
        assert!(r.best_group, "a lone model is its own best group");
    }
    assert_eq!(report.long.len(), 6);
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = common::tiny_config(r#"["rf", "mlpe"]"#, r#"["none", "platt", "va"]"#, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = common::emitted_bytes(&run_experiment(&cfg).unwrap(), a.path());
    let second = common::emitted_bytes(&run_experiment(&cfg).unwrap(), b.path());
    assert_eq!(first, second);
}

#[test]
fn empty_model_list_is_rejected() {
    let mut cfg = common::tiny_config(r#"["mlp"]"#, r#"["none"]"#, 1);
    cfg.models.clear();
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn metrics_csv_header_matches_schema() {
    let cfg = common::tiny_config(r#"["rf"]"#, r#"["none"]"#, 1);
    let dir = tempfile::tempdir().unwrap();
    let files = common::emitted_bytes(&run_experiment(&cfg).unwrap(), dir.path());
    let header = |name: &str| {
        let bytes = &files.iter().find(|(f, _)| f == name).unwrap().1;
        String::from_utf8(bytes.clone()).unwrap().lines().next().unwrap().to_string()
    };
    assert_eq!(header("metrics.csv"), "assay,setting,model,calibrator,metric,mean,std,n_reps,best_group");
    assert_eq!(header("metrics_long.csv"), "assay,setting,model,calibrator,rep,metric,value");
    assert_eq!(
        header("shift.csv"),
        "assay,setting,n_train,n_calib,n_test,label_shift,mmd_sq,mmd_norm,calib_label_shift,calib_mmd_sq,calib_mmd_norm"
    );
}

#[test]
fn every_variant_reported_and_bold_cells_match_best_group_flags() {
    let cfg = common::tiny_config(r#"["rf", "mlp", "mlpe", "mlpmc", "bnn"]"#, r#"["none", "platt", "va"]"#, 3);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);

    let variants: BTreeSet<String> = report.metrics.iter().map(|r| r.variant()).collect();
    for family in ["RF", "MLP", "MLPE", "MLPMC", "BNN"] {
        for suffix in ["", "-P", "-VA"] {
            assert!(variants.contains(&format!("{family}{suffix}")), "{family}{suffix} missing");
        }
    }
    assert_eq!(report.metrics.len(), 5 * 3 * 3);

    let summary = render_summary(&report);
    let bold = summary.matches("**").count() / 2;
    let flagged = report.metrics.iter().filter(|r| r.best_group).count();
    assert_eq!(bold, flagged);
    for metric in Metric::REPORTED {
        assert!(report.metrics.iter().any(|r| r.metric == metric && r.best_group));
    }
}

fn rows_for_reps(rows: &[LongRow], reps: &[usize]) -> Vec<LongRow> {
    let mut out: Vec<LongRow> = rows.iter().filter(|r| reps.contains(&r.rep)).cloned().collect();
    out.sort_by(|a, b| {
        (&a.model, &a.calibrator, a.rep, a.metric).cmp(&(&b.model, &b.calibrator, b.rep, b.metric))
    });
    out
}

#[test]
fn repetitions_do_not_depend_on_each_other() {
    let two = run_experiment(&common::tiny_config(r#"["rf", "mlp"]"#, r#"["none", "va"]"#, 2)).unwrap();
    let three = run_experiment(&common::tiny_config(r#"["rf", "mlp"]"#, r#"["none", "va"]"#, 3)).unwrap();
    assert_eq!(rows_for_reps(&two.long, &[0, 1]), rows_for_reps(&three.long, &[0, 1]));

    let mut reseeded = common::tiny_config(r#"["rf", "mlp"]"#, r#"["none", "va"]"#, 2);
    reseeded.master_seed += 1;
    let other = run_experiment(&reseeded).unwrap();
    let mlp = |rows: &[LongRow]| rows.iter().filter(|r| r.model == "MLP").cloned().collect::<Vec<_>>();
    assert_ne!(mlp(&two.long), mlp(&other.long));
}

#[test]
fn config_hash_ignores_run_local_fields() {
    let cfg = common::tiny_config(r#"["mlp"]"#, r#"["none"]"#, 2);
    let mut moved: ExperimentConfig = cfg.clone();
    moved.jobs = 8;
    moved.output_dir = "elsewhere".into();
    assert_eq!(config_hash(&cfg), config_hash(&moved));
    moved.master_seed += 1;
    assert_ne!(config_hash(&cfg), config_hash(&moved));
}

#[test]
fn single_class_assay_is_recorded_as_failure() {
    let text = r#"
version = 1
n_repetitions = 1
settings = [3]
models = ["rf"]
calibrators = ["none"]

[grid.rf]
n_estimators = [5]
max_depth = [4]

[[assays]]
name = "hopeless"
synth = { fp_len = 128, records_per_span = 30, support_size = 16, intercept = -40.0 }
"#;
    let report = run_experiment(&common::config(text)).unwrap();
    assert!(!report.failures.is_empty());
    assert!(report.failures.iter().all(|f| f.assay == "hopeless"));
    assert_eq!(report.shift.len(), 1);
}

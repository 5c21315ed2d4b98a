use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AssayConfig, ExperimentConfig, Family, CONFIG_VERSION};
use crate::calibrate::{vote_score, CalibrationMethod, Calibrator};
use crate::dataio::{parse_dataset, synth_generate, CompoundRecord, TemporalSplit};
use crate::error::{Error, Result};
use crate::forest::{predict_forest_all, search_forest, train_forest, ForestConfig};
use crate::metrics::{ace, aggregate, auc, bce_loss, Metric, TTestVariant, DEFAULT_BINS};
use crate::nn::{search_mlp, sigmoid, train_mlp, MlpConfig, Samples, SearchOutcome, TrainedMlp, TIE_TOLERANCE};
use crate::rng::{derive_seed, str_key};
use crate::shift::{label_shift, mmd};
use crate::uq::{predict_bnn_all, predict_ensemble_all, predict_mc_dropout_all, train_bnn, train_ensemble, BnnConfig, McDropoutModel};

/// Probabilities are clamped this far from 0 and 1 before taking the logit
/// that calibrators consume.
pub const SCORE_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub assay: String,
    pub setting: usize,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    /// Train-vs-test statistics.
    pub label_shift: f64,
    pub mmd_sq: f64,
    pub mmd_norm: f64,
    /// Calibration-vs-test statistics.
    pub calib_label_shift: f64,
    pub calib_mmd_sq: f64,
    pub calib_mmd_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub assay: String,
    pub setting: usize,
    pub model: String,
    pub calibrator: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_reps: usize,
    pub best_group: bool,
}

impl MetricRow {
    /// Variant name such as `MLPE-VA`.
    pub fn variant(&self) -> String {
        let suffix = self.calibrator.parse::<CalibrationMethod>().map(|m| m.suffix()).unwrap_or("");
        format!("{}{suffix}", self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub assay: String,
    pub setting: usize,
    pub model: String,
    pub calibrator: String,
    pub rep: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub assay: String,
    /// 0 when the failure is not tied to one setting.
    pub setting: usize,
    pub model: String,
    pub calibrator: String,
    pub rep: Option<usize>,
    pub stage: String,
    pub message: String,
}

/// Hyperparameters chosen by grid search, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub assay: String,
    pub setting: usize,
    pub model: String,
    pub candidate: usize,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssaySummary {
    pub name: String,
    pub n_records: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_version: u32,
    pub config_sha256: String,
    pub master_seed: u64,
    pub n_repetitions: usize,
    pub assays: Vec<AssaySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub shift: Vec<ShiftRow>,
    pub metrics: Vec<MetricRow>,
    pub long: Vec<LongRow>,
    pub selections: Vec<SelectionRow>,
    pub failures: Vec<FailureRow>,
}

/// SHA-256 of the config with run-local fields (worker count, output
/// directory) cleared.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.jobs = 0;
    c.output_dir = Default::default();
    let json = serde_json::to_string(&c).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_assay(config: &ExperimentConfig, assay: &AssayConfig) -> Result<(Vec<CompoundRecord>, usize)> {
    if let Some(params) = &assay.synth {
        return Ok((synth_generate(params, assay.synth_seed)?, 0));
    }
    let path = assay.path.as_ref().ok_or_else(|| Error::Config(format!("assay {} has no path", assay.name)))?;
    let parsed = parse_dataset(path, &assay.spec()?, config.fp_len, config.parse_mode)?;
    let skipped = parsed.skip_count();
    Ok((parsed.records, skipped))
}

/// Runs the whole benchmark. Only config and data-loading problems abort;
/// failures inside a cell are recorded in the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.jobs)))?;
    pool.install(|| run_inner(config))
}

fn run_inner(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let loaded: Vec<(Vec<CompoundRecord>, usize)> = config
        .assays
        .iter()
        .map(|a| load_assay(config, a))
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..config.assays.len())
        .flat_map(|a| config.settings.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<CellOutput> = cells
        .par_iter()
        .map(|&(a, setting)| run_cell(config, &config.assays[a].name, &loaded[a].0, setting))
        .collect();

    let mut report = ExperimentReport {
        provenance: Provenance {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_version: CONFIG_VERSION,
            config_sha256: config_hash(config),
            master_seed: config.master_seed,
            n_repetitions: config.n_repetitions,
            assays: config
                .assays
                .iter()
                .zip(&loaded)
                .map(|(a, (records, skipped))| AssaySummary {
                    name: a.name.clone(),
                    n_records: records.len(),
                    n_skipped: *skipped,
                })
                .collect(),
        },
        shift: Vec::new(),
        metrics: Vec::new(),
        long: Vec::new(),
        selections: Vec::new(),
        failures: Vec::new(),
    };
    for cell in results {
        report.shift.extend(cell.shift);
        report.metrics.extend(cell.metrics);
        report.long.extend(cell.long);
        report.selections.extend(cell.selections);
        report.failures.extend(cell.failures);
    }
    Ok(report)
}

#[derive(Default)]
struct CellOutput {
    shift: Option<ShiftRow>,
    metrics: Vec<MetricRow>,
    long: Vec<LongRow>,
    selections: Vec<SelectionRow>,
    failures: Vec<FailureRow>,
}

/// Hyperparameters fixed for all repetitions of one (assay, setting).
struct Selected {
    rf: Option<ForestConfig>,
    mlp: Option<MlpConfig>,
    mlpmc: Option<MlpConfig>,
}

/// Validation and test outputs of one trained model: probabilities plus the
/// logit-scale scores that calibrators consume.
struct Predictions {
    valid_scores: Vec<f64>,
    test_scores: Vec<f64>,
    test_probs: Vec<f64>,
}

pub fn prob_score(p: f64) -> f64 {
    let p = p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    p.ln() - (-p).ln_1p()
}

fn run_cell(config: &ExperimentConfig, assay: &str, records: &[CompoundRecord], setting: usize) -> CellOutput {
    let mut out = CellOutput::default();
    let fail = |model: &str, calibrator: &str, rep: Option<usize>, stage: &str, message: String| FailureRow {
        assay: assay.to_string(),
        setting,
        model: model.to_string(),
        calibrator: calibrator.to_string(),
        rep,
        stage: stage.to_string(),
        message,
    };

    let split = match TemporalSplit::new(records, setting) {
        Ok(s) => s.selection,
        Err(e) => {
            out.failures.push(fail("*", "*", None, "split", e.to_string()));
            return out;
        }
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let (train_r, valid_r, test_r) = (pick(&split.train), pick(&split.valid), pick(&split.test));

    match shift_row(assay, setting, &train_r, &valid_r, &test_r) {
        Ok(row) => out.shift = Some(row),
        Err(e) => out.failures.push(fail("*", "*", None, "shift", e.to_string())),
    }

    let train = Samples::from_all(&train_r);
    let valid = Samples::from_all(&valid_r);
    let test = Samples::from_all(&test_r);
    let input_dim = train.input_dim().unwrap_or(config.fp_len);
    let cell_key = [str_key(assay), setting as u64];

    let mut selected = Selected {
        rf: None,
        mlp: None,
        mlpmc: None,
    };
    if config.models.contains(&Family::Rf) {
        let seed = derive_seed(config.master_seed, &[cell_key[0], cell_key[1], str_key("grid-rf")]);
        match search_forest(&config.forest_space(), &train, &valid, seed) {
            Ok(o) => {
                out.selections.push(selection(assay, setting, Family::Rf, o.best_index, &o.config));
                selected.rf = Some(o.config);
            }
            Err(e) => out.failures.push(fail(Family::Rf.label(), "*", None, "grid", e.to_string())),
        }
    }
    if config.models.iter().any(|f| f.uses_mlp_grid()) {
        let seed = derive_seed(config.master_seed, &[cell_key[0], cell_key[1], str_key("grid-mlp")]);
        let space = config.mlp_space(input_dim);
        match search_mlp(&space, &train, &valid, seed) {
            Ok(o) => {
                out.selections.push(selection(assay, setting, Family::Mlp, o.best_index, &o.config));
                if config.models.contains(&Family::Mlpmc) {
                    match best_with_dropout(&o, &space) {
                        Some(i) => {
                            out.selections.push(selection(assay, setting, Family::Mlpmc, i, &space[i]));
                            selected.mlpmc = Some(space[i].clone());
                        }
                        None => out.failures.push(fail(
                            Family::Mlpmc.label(),
                            "*",
                            None,
                            "grid",
                            "no candidate with dropout above 0 trained successfully".into(),
                        )),
                    }
                }
                selected.mlp = Some(o.config);
            }
            Err(e) => {
                for f in config.models.iter().filter(|f| f.uses_mlp_grid()) {
                    out.failures.push(fail(f.label(), "*", None, "grid", e.to_string()));
                }
            }
        }
    }

    let families: Vec<Family> = Family::ALL
        .into_iter()
        .filter(|f| config.models.contains(f))
        .filter(|f| match f {
            Family::Rf => selected.rf.is_some(),
            Family::Mlpmc => selected.mlpmc.is_some(),
            _ => selected.mlp.is_some(),
        })
        .collect();
    let methods: Vec<CalibrationMethod> = CalibrationMethod::ALL
        .into_iter()
        .filter(|m| config.calibrators.contains(m))
        .collect();

    // rep -> family -> method -> metric values or failure
    type RepResult = Vec<(Family, Vec<(CalibrationMethod, std::result::Result<[f64; 3], (String, String)>)>)>;
    let reps: Vec<RepResult> = (0..config.n_repetitions)
        .into_par_iter()
        .map(|rep| {
            families
                .iter()
                .map(|&family| {
                    let seed = derive_seed(
                        config.master_seed,
                        &[cell_key[0], cell_key[1], str_key(family.key()), rep as u64],
                    );
                    let preds = predict_family(config, family, &selected, &train, &valid, &test, seed);
                    let per_method = methods
                        .iter()
                        .map(|&m| {
                            let r = match &preds {
                                Ok(p) => evaluate(m, p, &valid.labels, &test.labels).map_err(|e| ("calibrate/evaluate".to_string(), e.to_string())),
                                Err(e) => Err(("train".to_string(), e.to_string())),
                            };
                            (m, r)
                        })
                        .collect();
                    (family, per_method)
                })
                .collect()
        })
        .collect();

    let mut values: BTreeMap<(Family, CalibrationMethod), Vec<[f64; 3]>> = BTreeMap::new();
    let mut broken: BTreeMap<(Family, CalibrationMethod), bool> = BTreeMap::new();
    for (rep, rep_result) in reps.into_iter().enumerate() {
        for (family, per_method) in rep_result {
            for (m, r) in per_method {
                match r {
                    Ok(v) => {
                        for (metric, value) in Metric::REPORTED.iter().zip(v) {
                            out.long.push(LongRow {
                                assay: assay.to_string(),
                                setting,
                                model: family.label().to_string(),
                                calibrator: m.key().to_string(),
                                rep,
                                metric: *metric,
                                value,
                            });
                        }
                        values.entry((family, m)).or_default().push(v);
                    }
                    Err((stage, message)) => {
                        out.failures.push(fail(family.label(), m.key(), Some(rep), &stage, message));
                        broken.insert((family, m), true);
                    }
                }
            }
        }
    }

    let complete: Vec<((Family, CalibrationMethod), Vec<[f64; 3]>)> = values
        .into_iter()
        .filter(|(k, v)| !broken.contains_key(k) && v.len() == config.n_repetitions)
        .collect();
    for (mi, metric) in Metric::REPORTED.iter().enumerate() {
        let scores: Vec<(String, Vec<f64>)> = complete
            .iter()
            .map(|((f, m), v)| (format!("{}{}", f.label(), m.suffix()), v.iter().map(|x| x[mi]).collect()))
            .collect();
        match aggregate(*metric, &scores, TTestVariant::Welch) {
            Ok(summaries) => {
                for (((f, m), _), s) in complete.iter().zip(summaries) {
                    out.metrics.push(MetricRow {
                        assay: assay.to_string(),
                        setting,
                        model: f.label().to_string(),
                        calibrator: m.key().to_string(),
                        metric: *metric,
                        mean: s.mean,
                        std: s.std,
                        n_reps: s.n_reps,
                        best_group: s.is_best_group,
                    });
                }
            }
            Err(e) => out.failures.push(fail("*", "*", None, "aggregate", e.to_string())),
        }
    }
    out
}

fn shift_row(
    assay: &str,
    setting: usize,
    train: &[CompoundRecord],
    calib: &[CompoundRecord],
    test: &[CompoundRecord],
) -> Result<ShiftRow> {
    let fps = |r: &[CompoundRecord]| r.iter().map(|c| c.fp.clone()).collect::<Vec<_>>();
    let test_fps = fps(test);
    let a = mmd(&fps(train), &test_fps)?;
    let b = mmd(&fps(calib), &test_fps)?;
    Ok(ShiftRow {
        assay: assay.to_string(),
        setting,
        n_train: train.len(),
        n_calib: calib.len(),
        n_test: test.len(),
        label_shift: label_shift(train, test)?,
        mmd_sq: a.mmd_sq,
        mmd_norm: a.mmd_norm,
        calib_label_shift: label_shift(calib, test)?,
        calib_mmd_sq: b.mmd_sq,
        calib_mmd_norm: b.mmd_norm,
    })
}

fn selection<C: Serialize>(assay: &str, setting: usize, family: Family, candidate: usize, config: &C) -> SelectionRow {
    SelectionRow {
        assay: assay.to_string(),
        setting,
        model: family.label().to_string(),
        candidate,
        params: serde_json::to_string(config).expect("config serializes"),
    }
}

/// Lowest-loss candidate with dropout, with the same tie rule as the search.
fn best_with_dropout(o: &SearchOutcome<MlpConfig, TrainedMlp>, space: &[MlpConfig]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, loss) in o.losses.iter().enumerate() {
        if let (Some(l), true) = (loss, space[i].dropout_rate > 0.0) {
            if best.is_none_or(|(_, b)| *l < b - TIE_TOLERANCE) {
                best = Some((i, *l));
            }
        }
    }
    best.map(|b| b.0)
}

fn predict_family(
    config: &ExperimentConfig,
    family: Family,
    selected: &Selected,
    train: &Samples<'_>,
    valid: &Samples<'_>,
    test: &Samples<'_>,
    seed: u64,
) -> Result<Predictions> {
    let from_probs = |valid_probs: Vec<f64>, test_probs: Vec<f64>| Predictions {
        valid_scores: valid_probs.iter().map(|&p| prob_score(p)).collect(),
        test_scores: test_probs.iter().map(|&p| prob_score(p)).collect(),
        test_probs,
    };
    let mlp = || selected.mlp.clone().ok_or_else(|| Error::Contract("no MLP selection".into()));
    match family {
        Family::Rf => {
            let cfg = ForestConfig {
                seed,
                ..selected.rf.clone().ok_or_else(|| Error::Contract("no forest selection".into()))?
            };
            let f = train_forest(train, &cfg)?;
            let valid_votes = predict_forest_all(&f, &valid.fps)?;
            let test_votes = predict_forest_all(&f, &test.fps)?;
            Ok(Predictions {
                valid_scores: valid_votes.iter().map(|&v| vote_score(v)).collect(),
                test_scores: test_votes.iter().map(|&v| vote_score(v)).collect(),
                test_probs: test_votes,
            })
        }
        Family::Mlp => {
            let m = train_mlp(train, valid, &MlpConfig { seed, ..mlp()? })?;
            let logits = |s: &Samples<'_>| s.fps.iter().map(|x| m.network.logit(x, None)).collect::<Result<Vec<f64>>>();
            let test_scores = logits(test)?;
            Ok(Predictions {
                valid_scores: logits(valid)?,
                test_probs: test_scores.iter().map(|&z| sigmoid(z)).collect(),
                test_scores,
            })
        }
        Family::Mlpe => {
            let e = train_ensemble(train, valid, &mlp()?, config.uq.ensemble_members, seed)?;
            Ok(from_probs(predict_ensemble_all(&e, &valid.fps)?, predict_ensemble_all(&e, &test.fps)?))
        }
        Family::Mlpmc => {
            let base_cfg = MlpConfig {
                seed,
                ..selected.mlpmc.clone().ok_or_else(|| Error::Contract("no MC dropout selection".into()))?
            };
            let base = train_mlp(train, valid, &base_cfg)?;
            let m = McDropoutModel::new(base, config.uq.mc_passes, derive_seed(seed, &[1]))?;
            Ok(from_probs(predict_mc_dropout_all(&m, &valid.fps)?, predict_mc_dropout_all(&m, &test.fps)?))
        }
        Family::Bnn => {
            let best = mlp()?;
            let uq = &config.uq;
            let cfg = BnnConfig {
                mlp: MlpConfig {
                    dropout_rate: 0.0,
                    weight_decay: 0.0,
                    seed,
                    ..best
                },
                prior_sigma: uq.bnn_prior_sigma,
                n_train_samples: uq.bnn_train_samples,
                n_valid_samples: uq.bnn_valid_samples,
                n_infer_samples: uq.bnn_infer_samples,
                ..BnnConfig::default()
            };
            let m = train_bnn(train, valid, &cfg)?;
            let n = cfg.n_infer_samples;
            Ok(from_probs(predict_bnn_all(&m, &valid.fps, n)?, predict_bnn_all(&m, &test.fps, n)?))
        }
    }
}

/// AUC, BCE and ACE of one calibration variant on the test fold.
fn evaluate(method: CalibrationMethod, p: &Predictions, valid_labels: &[bool], test_labels: &[bool]) -> Result<[f64; 3]> {
    let probs = if method == CalibrationMethod::None {
        p.test_probs.clone()
    } else {
        let mut c = Calibrator::new(method);
        c.fit(&p.valid_scores, valid_labels)?;
        c.apply_all(&p.test_scores)?
    };
    Ok([
        auc(&probs, test_labels)?,
        bce_loss(&probs, test_labels)?,
        ace(&probs, test_labels, DEFAULT_BINS)?,
    ])
}

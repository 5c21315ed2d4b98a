use std::fmt;

use serde::{Deserialize, Serialize};

use super::ttest::{t_test, TTestVariant};
use crate::error::{Error, Result};

/// Models whose two-sided p-value against the best model reaches this level
/// join the best group.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "AUC")]
    Auc,
    #[serde(rename = "BCE")]
    Bce,
    #[serde(rename = "ACE")]
    Ace,
    #[serde(rename = "ECE")]
    Ece,
}

impl Metric {
    /// Metrics reported for every cell.
    pub const REPORTED: [Metric; 3] = [Metric::Auc, Metric::Bce, Metric::Ace];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Bce => "BCE",
            Metric::Ace => "ACE",
            Metric::Ece => "ECE",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Auc)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model: String,
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation; NaN for a single repetition.
    pub std: f64,
    pub n_reps: usize,
    pub is_best_group: bool,
}

/// Summarises repetition scores of competing models on one metric and flags
/// the best model together with every model not significantly different
/// from it. Ties on the mean go to the first model.
pub fn aggregate(
    metric: Metric,
    scores: &[(String, Vec<f64>)],
    variant: TTestVariant,
) -> Result<Vec<MetricSummary>> {
    let Some((_, first)) = scores.first() else {
        return Ok(Vec::new());
    };
    let n_reps = first.len();
    if n_reps == 0 {
        return Err(Error::Contract("no repetitions to aggregate".into()));
    }
    if let Some((model, v)) = scores.iter().find(|(_, v)| v.len() != n_reps) {
        return Err(Error::Contract(format!(
            "model {model} has {} repetitions, expected {n_reps}",
            v.len()
        )));
    }

    let stats: Vec<(f64, f64)> = scores.iter().map(|(_, v)| mean_std(v)).collect();
    let mut best = 0;
    for (i, &(mean, _)) in stats.iter().enumerate().skip(1) {
        let better = if metric.higher_is_better() {
            mean > stats[best].0
        } else {
            mean < stats[best].0
        };
        if better {
            best = i;
        }
    }

    scores
        .iter()
        .zip(&stats)
        .enumerate()
        .map(|(i, ((model, values), &(mean, std)))| {
            let is_best_group = if i == best {
                true
            } else if n_reps < 2 {
                mean == stats[best].0
            } else {
                t_test(values, &scores[best].1, variant)?.p >= SIGNIFICANCE_LEVEL
            };
            Ok(MetricSummary {
                model: model.clone(),
                metric,
                mean,
                std,
                n_reps,
                is_best_group,
            })
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::welch_t_test;

    fn named(rows: &[(&str, &[f64])]) -> Vec<(String, Vec<f64>)> {
        rows.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn single_model_is_best() {
        let out = aggregate(Metric::Bce, &named(&[("MLP", &[0.4, 0.5])]), TTestVariant::Welch).unwrap();
        assert!(out[0].is_best_group);
        assert!((out[0].mean - 0.45).abs() < 1e-15);
        assert!((out[0].std - (0.005f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_vectors_share_the_best_group() {
        let v = [0.3, 0.35, 0.32];
        let out = aggregate(Metric::Ace, &named(&[("A", &v), ("B", &v)]), TTestVariant::Welch).unwrap();
        assert!(out.iter().all(|s| s.is_best_group));
    }

    #[test]
    fn one_significantly_worse_model_is_excluded() {
        let a = [0.80, 0.82, 0.81, 0.79, 0.83];
        let b = [0.805, 0.815, 0.80, 0.79, 0.82];
        let c = [0.70, 0.71, 0.69, 0.72, 0.70];
        assert!(welch_t_test(&b, &a).unwrap().p > 0.05);
        assert!(welch_t_test(&c, &a).unwrap().p < 0.05);
        let out = aggregate(
            Metric::Auc,
            &named(&[("A", &a), ("B", &b), ("C", &c)]),
            TTestVariant::Welch,
        )
        .unwrap();
        let flags: Vec<bool> = out.iter().map(|s| s.is_best_group).collect();
        assert_eq!(flags, [true, true, false]);
    }

    #[test]
    fn lower_is_better_for_losses() {
        let out = aggregate(
            Metric::Bce,
            &named(&[("A", &[0.9, 0.91, 0.92]), ("B", &[0.3, 0.31, 0.29])]),
            TTestVariant::Pooled,
        )
        .unwrap();
        assert_eq!(
            out.iter().map(|s| s.is_best_group).collect::<Vec<_>>(),
            [false, true]
        );
    }

    #[test]
    fn mismatched_repetitions_rejected() {
        let err = aggregate(
            Metric::Auc,
            &named(&[("A", &[0.1, 0.2]), ("B", &[0.1])]),
            TTestVariant::Welch,
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}

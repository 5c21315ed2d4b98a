//! Ranking, likelihood and calibration metrics plus repetition aggregation.

mod aggregate;
mod ttest;

pub use aggregate::{aggregate, Metric, MetricSummary, SIGNIFICANCE_LEVEL};
pub use ttest::{ln_gamma, regularized_incomplete_beta, student_t_two_sided_p, t_test, welch_t_test, TTest, TTestVariant};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

pub const DEFAULT_BINS: usize = 10;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn bce_loss(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::InsufficientData("BCE of an empty sample".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Area under the ROC curve in the Mann-Whitney form, ties counting one
/// half. The pair count is accumulated in integers so the result is exact.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the Mann-Whitney U
    let mut twice_u = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice_u += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Adaptive calibration error: equal-mass bins over the stably sorted
/// predictions, unweighted mean of `|mean prob - positive rate|`.
pub fn ace(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if n_bins == 0 {
        return Err(Error::InvalidParams("ACE needs at least one bin".into()));
    }
    let n = probs.len();
    if n < n_bins {
        return Err(Error::InsufficientData(format!(
            "{n} predictions cannot fill {n_bins} bins"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));

    let total: f64 = (0..n_bins)
        .map(|k| {
            let bin = &order[k * n / n_bins..(k + 1) * n / n_bins];
            bin_gap(bin.iter().map(|&i| (probs[i], labels[i])))
        })
        .sum();
    Ok(total / n_bins as f64)
}

/// Expected calibration error over equal-width bins `[k/B, (k+1)/B)`, the
/// last bin closed, weighted by occupancy.
pub fn ece(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<f64> {
    check_lengths(probs.len(), labels.len())?;
    if n_bins == 0 {
        return Err(Error::InvalidParams("ECE needs at least one bin".into()));
    }
    if probs.is_empty() {
        return Err(Error::InsufficientData("ECE of an empty sample".into()));
    }
    let mut bins: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let k = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        bins[k].push((p, y));
    }
    let n = probs.len() as f64;
    Ok(bins
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| b.len() as f64 / n * bin_gap(b.iter().copied()))
        .sum())
}

fn bin_gap(items: impl Iterator<Item = (f64, bool)>) -> f64 {
    let (mut count, mut sum_p, mut pos) = (0usize, 0.0, 0usize);
    for (p, y) in items {
        count += 1;
        sum_p += p;
        pos += usize::from(y);
    }
    if count == 0 {
        return 0.0;
    }
    (sum_p / count as f64 - pos as f64 / count as f64).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u64;
        let (mut np, mut nn) = (0u64, 0u64);
        for (i, &yi) in labels.iter().enumerate() {
            if yi {
                np += 1;
            } else {
                nn += 1;
            }
            if !yi {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj {
                    continue;
                }
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
        twice as f64 / (2 * np * nn) as f64
    }

    #[test]
    fn bce_fixtures() {
        assert!(bce_loss(&[1.0, 0.0], &[true, false]).unwrap() <= 1e-6);
        let uniform = bce_loss(&[0.5; 6], &[true, false, true, true, false, false]).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
        let two = bce_loss(&[0.9, 0.2], &[true, false]).unwrap();
        assert!((two - (-(0.9f64).ln() - (0.8f64).ln()) / 2.0).abs() < 1e-15);
        assert!((two - 0.164252).abs() < 1e-6);
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 5], &[true, false, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ace_fixtures() {
        let probs = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        assert!((ace(&probs, &labels, 2).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(ace(&[0.5; 4], &[true, false, false, true], 2).unwrap(), 0.0);
        // each bin predicts exactly its empirical rate
        let probs = [0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75];
        let labels = [true, false, false, false, true, true, true, false];
        assert_eq!(ace(&probs, &labels, 2).unwrap(), 0.0);
        assert!(matches!(ace(&[0.1, 0.2], &[true, false], 3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ece_fixtures() {
        let probs = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        assert!((ece(&probs, &labels, 2).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(ece(&[0.25; 4], &[true, false, false, false], 10).unwrap(), 0.0);
        assert_eq!(ece(&[1.0], &[true], 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_exceeds_ace_with_sparse_high_bin() {
        // 99 predictions of 0.1 with one positive per ten, plus a single
        // confident miss that ECE isolates in its own top bin
        let mut probs = vec![0.1; 99];
        probs.push(0.95);
        let labels: Vec<bool> = (0..100).map(|i| i < 99 && i % 10 == 0).collect();
        let a = ace(&probs, &labels, 10).unwrap();
        let e = ece(&probs, &labels, 10).unwrap();
        assert!((a - 0.0085).abs() < 1e-12, "ace {a}");
        assert!(e > a, "ece {e} ace {a}");
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(
            data in proptest::collection::vec((0u8..20, any::<bool>()), 2..500)
        ) {
            let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|&(_, y)| y).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let fast = auc(&scores, &labels).unwrap();
            prop_assert_eq!(fast, brute_auc(&scores, &labels));
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 5.0).collect();
            prop_assert_eq!(auc(&warped, &labels).unwrap(), fast);
        }

        #[test]
        fn ace_and_ece_bounded_and_ace_permutation_invariant(
            data in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 10..200),
            rot in 0usize..200,
        ) {
            let probs: Vec<f64> = data.iter().map(|d| d.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let a = ace(&probs, &labels, 10).unwrap();
            let e = ece(&probs, &labels, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&e));
            // distinct values make the sorted order independent of input order
            let mut uniq = probs.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            if uniq.len() == probs.len() {
                let k = rot % data.len();
                let mut p2 = probs.clone();
                let mut l2 = labels.clone();
                p2.rotate_left(k);
                l2.rotate_left(k);
                prop_assert_eq!(ace(&p2, &l2, 10).unwrap(), a);
            }
        }

        #[test]
        fn bce_finite_on_closed_interval(p in 0.0f64..=1.0, y in any::<bool>()) {
            prop_assert!(bce_loss(&[p], &[y]).unwrap().is_finite());
        }
    }
}

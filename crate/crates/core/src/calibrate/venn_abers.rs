//! Inductive Venn-ABERS predictor.
//!
//! For a test score `s` the calibration pairs are extended with `(s, 0)`
//! and `(s, 1)` in turn; `p0` and `p1` are the isotonic fits at `s`. The
//! fit at `s` depends only on where `s` falls among the distinct calibration
//! scores (below, between two, tied with one, above), so [`VennAbersCalibrator`]
//! precomputes both values for all `2K + 1` positions and answers queries by
//! binary search. [`venn_abers`] is the literal per-query refit.

use serde::{Deserialize, Serialize};

use super::isotonic::{pava, pool, Block};
use crate::error::{Error, Result};

/// Denominators of the point merge below this are rejected.
pub const VA_DENOM_TOL: f64 = 1e-12;

/// Reference semantics: refit the isotonic regression with the test point
/// appended under each label.
pub fn venn_abers(calib: &[(f64, bool)], test_score: f64) -> Result<(f64, f64)> {
    if calib.is_empty() {
        return Err(Error::InsufficientData(
            "Venn-ABERS needs a non-empty calibration set".into(),
        ));
    }
    let mut sorted = calib.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let at = sorted.partition_point(|c| c.0 <= test_score);
    let fit_with = |label: bool| -> Result<f64> {
        let mut pairs: Vec<(f64, f64)> = sorted.iter().map(|&(s, y)| (s, f64::from(u8::from(y)))).collect();
        pairs.insert(at, (test_score, f64::from(u8::from(label))));
        let fit = pava(&pairs, &vec![1.0; pairs.len()])?;
        Ok(fit.fitted()[at])
    };
    Ok((fit_with(false)?, fit_with(true)?))
}

/// Minimax merge of the Venn-ABERS interval, `p1 / (1 - p0 + p1)`.
pub fn va_point(p0: f64, p1: f64) -> Result<f64> {
    if !((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1)) {
        return Err(Error::Calibration(format!(
            "Venn-ABERS bounds ({p0}, {p1}) outside [0, 1]"
        )));
    }
    let denom = 1.0 - p0 + p1;
    if denom < VA_DENOM_TOL {
        return Err(Error::Calibration(format!(
            "degenerate Venn-ABERS interval ({p0}, {p1})"
        )));
    }
    Ok(p1 / denom)
}

/// Checkpoint form: the calibration pairs sorted by score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VennAbersState {
    pub pairs: Vec<(f64, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VennAbersState", into = "VennAbersState")]
pub struct VennAbersCalibrator {
    pairs: Vec<(f64, bool)>,
    distinct: Vec<f64>,
    /// `(p0, p1)` for slot `2k` (below `distinct[k]`, above `distinct[k-1]`)
    /// and slot `2k + 1` (equal to `distinct[k]`).
    table: Vec<(f64, f64)>,
}

impl TryFrom<VennAbersState> for VennAbersCalibrator {
    type Error = Error;

    fn try_from(state: VennAbersState) -> Result<Self> {
        let scores: Vec<f64> = state.pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = state.pairs.iter().map(|p| p.1).collect();
        Self::fit(&scores, &labels)
    }
}

impl From<VennAbersCalibrator> for VennAbersState {
    fn from(c: VennAbersCalibrator) -> Self {
        VennAbersState { pairs: c.pairs }
    }
}

impl VennAbersCalibrator {
    pub fn fit(scores: &[f64], labels: &[bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::InsufficientData(
                "Venn-ABERS needs a non-empty calibration set".into(),
            ));
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::Calibration(format!("invalid score {s}")));
        }
        let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut distinct: Vec<f64> = Vec::new();
        let mut tie_blocks: Vec<Block> = Vec::new();
        for &(s, y) in &pairs {
            let target = f64::from(u8::from(y));
            match distinct.last() {
                Some(&last) if last == s => {
                    let b = tie_blocks.last_mut().expect("parallel vecs");
                    b.weight += 1.0;
                    b.weighted_sum += target;
                }
                _ => {
                    distinct.push(s);
                    tie_blocks.push(Block::new(1.0, target));
                }
            }
        }

        let k = distinct.len();
        let mut table = Vec::with_capacity(2 * k + 1);
        for slot in 0..=2 * k {
            let p0 = slot_fit(&tie_blocks, slot, 0.0);
            let p1 = slot_fit(&tie_blocks, slot, 1.0);
            table.push((p0, p1));
        }
        Ok(Self {
            pairs,
            distinct,
            table,
        })
    }

    pub fn pairs(&self) -> &[(f64, bool)] {
        &self.pairs
    }

    fn slot(&self, score: f64) -> usize {
        let below = self.distinct.partition_point(|&c| c < score);
        if below < self.distinct.len() && self.distinct[below] == score {
            2 * below + 1
        } else {
            2 * below
        }
    }

    pub fn interval(&self, score: f64) -> (f64, f64) {
        self.table[self.slot(score)]
    }

    pub fn apply(&self, score: f64) -> Result<f64> {
        let (p0, p1) = self.interval(score);
        va_point(p0, p1)
    }
}

/// Isotonic value at the inserted test point for one slot. The insertion
/// and tie accumulation mirror [`pava`] on the explicitly extended list, so
/// the results agree bit for bit.
fn slot_fit(tie_blocks: &[Block], slot: usize, target: f64) -> f64 {
    let pos = slot / 2;
    let tied = slot % 2 == 1;
    let test = Block::new(1.0, target);
    let mut blocks: Vec<Block> = Vec::with_capacity(tie_blocks.len() + 1);
    blocks.extend_from_slice(&tie_blocks[..pos]);
    let test_idx;
    if tied {
        let mut merged = tie_blocks[pos];
        merged.weight += test.weight;
        merged.weighted_sum += test.weight * target;
        blocks.push(merged);
        test_idx = pos;
        blocks.extend_from_slice(&tie_blocks[pos + 1..]);
    } else {
        blocks.push(test);
        test_idx = pos;
        blocks.extend_from_slice(&tie_blocks[pos..]);
    }
    let pooled = pool(blocks);
    let mut covered = 0;
    for b in &pooled {
        covered += b.len;
        if covered > test_idx {
            return b.value();
        }
    }
    unreachable!("test block is always covered")
}

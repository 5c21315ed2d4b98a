use serde::{Deserialize, Serialize};

use super::CompoundRecord;
use crate::error::{Error, Result};

pub const N_FOLDS: usize = 5;

/// Chronologically ordered folds of record indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds(pub Vec<Vec<usize>>);

impl Folds {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.0.iter().map(Vec::len).collect()
    }
}

/// Index selection for one temporal setting. The validation fold is also the
/// calibration set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingSplit {
    pub setting: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub folds: Folds,
    pub selection: SettingSplit,
}

impl TemporalSplit {
    pub fn new(records: &[CompoundRecord], setting: usize) -> Result<Self> {
        let folds = temporal_split(records, N_FOLDS)?;
        let selection = make_setting(&folds, setting)?;
        Ok(Self { folds, selection })
    }
}

/// Sorts by (date, row index) and cuts the ranking at `floor(k N / n)`.
pub fn temporal_split(records: &[CompoundRecord], n_folds: usize) -> Result<Folds> {
    if n_folds < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    let n = records.len();
    if n < n_folds {
        return Err(Error::InsufficientData(format!(
            "{n} records cannot fill {n_folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // sort_by_key is stable, so equal dates keep row order
    order.sort_by_key(|&i| records[i].date);

    let folds = (0..n_folds)
        .map(|k| order[k * n / n_folds..(k + 1) * n / n_folds].to_vec())
        .collect();
    Ok(Folds(folds))
}

/// Setting `s` trains on folds `1..=s`, validates on `s + 1` and tests on
/// `s + 2` (1-based).
pub fn make_setting(folds: &Folds, setting: usize) -> Result<SettingSplit> {
    if folds.len() != N_FOLDS {
        return Err(Error::InvalidParams(format!(
            "expected {N_FOLDS} folds, got {}",
            folds.len()
        )));
    }
    if !(1..=3).contains(&setting) {
        return Err(Error::InvalidSetting(setting));
    }
    Ok(SettingSplit {
        setting,
        train: folds.0[..setting].concat(),
        valid: folds.0[setting].clone(),
        test: folds.0[setting + 1].clone(),
    })
}

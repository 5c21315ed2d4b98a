//! Assay ingestion, labelling, temporal folds and the synthetic drift
//! generator.

mod fingerprint;
mod records;
mod split;
mod synth;

pub use fingerprint::{Fingerprint, Ones, DEFAULT_FP_LEN};
pub use records::{parse_dataset, parse_reader, write_dataset, ParseMode, ParsedDataset, RowError};
pub use split::{make_setting, temporal_split, Folds, SettingSplit, TemporalSplit, N_FOLDS};
pub use synth::{synth_generate, SynthParams, SYNTH_SPEC_NAME};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    PScale,
}

/// Which side of the threshold holds the preferred class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "above")]
    PreferredAbove,
    #[serde(rename = "below")]
    PreferredBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssaySpec {
    pub name: String,
    pub transform: Transform,
    pub threshold: f64,
    pub direction: Direction,
}

impl AssaySpec {
    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "assay {}: threshold must be finite",
                self.name
            )));
        }
        Ok(())
    }

    pub fn transform_value(&self, raw: f64) -> Result<f64> {
        match self.transform {
            Transform::Identity if raw.is_finite() => Ok(raw),
            Transform::Identity => Err(Error::InvalidMeasurement(raw)),
            Transform::PScale => to_p_scale(raw),
        }
    }

    /// Applies transform and threshold to a raw measurement.
    pub fn label(&self, raw: f64) -> Result<bool> {
        Ok(binarize(self.transform_value(raw)?, self))
    }
}

/// Converts a micromolar concentration to the negative decadic log of the
/// molar value: `6 - log10(uM)`.
pub fn to_p_scale(value_um: f64) -> Result<f64> {
    if !value_um.is_finite() || value_um <= 0.0 {
        return Err(Error::InvalidMeasurement(value_um));
    }
    Ok(6.0 - value_um.log10())
}

/// Strict-inequality labelling; values equal to the threshold are never
/// preferred.
pub fn binarize(value: f64, spec: &AssaySpec) -> bool {
    match spec.direction {
        Direction::PreferredAbove => value > spec.threshold,
        Direction::PreferredBelow => value < spec.threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundRecord {
    pub id: String,
    pub fp: Fingerprint,
    pub raw_value: f64,
    pub date: NaiveDate,
    pub label: bool,
}

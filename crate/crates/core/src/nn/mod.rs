//! Dense feed-forward binary classifier on fingerprint inputs.
//!
//! The first layer reads the fingerprint as a sparse 0/1 vector, hidden
//! layers use ReLU followed by inverted dropout, and a single linear output
//! unit is passed through the sigmoid.

mod checkpoint;
mod config;
mod grid;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointKind, CHECKPOINT_VERSION};
pub use config::{default_mlp_grid, MlpConfig, MlpGrid};
pub use grid::{grid_search, search_mlp, SearchOutcome, TIE_TOLERANCE};
pub use network::{DropoutMask, Layer, Mode, Network};
pub use train::{train_mlp, Adam, EarlyStopping, Plateau, TrainedMlp};
pub(crate) use train::{check_shapes, check_training_inputs, fit_epochs, EpochModel};

pub use crate::metrics::bce_loss;

use crate::dataio::{CompoundRecord, Fingerprint};

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Borrowed inputs and labels for training or evaluation.
#[derive(Debug, Clone, Default)]
pub struct Samples<'a> {
    pub fps: Vec<&'a Fingerprint>,
    pub labels: Vec<bool>,
}

impl<'a> Samples<'a> {
    pub fn from_records(records: &'a [CompoundRecord], idx: &[usize]) -> Self {
        Self {
            fps: idx.iter().map(|&i| &records[i].fp).collect(),
            labels: idx.iter().map(|&i| records[i].label).collect(),
        }
    }

    pub fn from_all(records: &'a [CompoundRecord]) -> Self {
        Self {
            fps: records.iter().map(|r| &r.fp).collect(),
            labels: records.iter().map(|r| r.label).collect(),
        }
    }

    pub fn new(fps: Vec<&'a Fingerprint>, labels: Vec<bool>) -> Self {
        debug_assert_eq!(fps.len(), labels.len());
        Self { fps, labels }
    }

    pub fn len(&self) -> usize {
        self.fps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fps.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.fps.first().map(|f| f.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}

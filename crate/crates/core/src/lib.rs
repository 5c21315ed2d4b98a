//! Benchmark toolkit for uncertainty quantification and post hoc calibration
//! of binary molecular-property classifiers under temporal distribution
//! shift.
//!
//! * [`dataio`]: assay ingestion, labelling, temporal folds, synthetic data
//! * [`shift`]: label-ratio and Tanimoto-MMD shift statistics
//! * [`nn`]: feed-forward classifier core (backprop, Adam, early stopping)
//! * [`uq`]: deep ensembles, MC dropout, Bayes-by-Backprop
//! * [`forest`]: vote-ratio random forest
//! * [`calibrate`]: Platt scaling and Venn-ABERS
//! * [`metrics`]: AUC, BCE, ACE, ECE, Welch test, repetition aggregation
//! * [`harness`]: experiment grid runner and report writer

pub mod calibrate;
pub mod dataio;
pub mod error;
pub mod forest;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod shift;
pub mod uq;

pub use error::{Error, Result};

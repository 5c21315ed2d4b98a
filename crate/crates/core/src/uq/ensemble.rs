use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::nn::{train_mlp, CheckpointKind, MlpConfig, Samples, TrainedMlp};
use crate::rng::derive_seed;

pub const DEFAULT_MEMBERS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepEnsemble {
    pub config: MlpConfig,
    pub members: Vec<TrainedMlp>,
}

impl CheckpointKind for DeepEnsemble {
    const KIND: &'static str = "ensemble";

    fn check(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Contract("ensemble without members".into()));
        }
        for m in &self.members {
            if m.config.layer_sizes() != self.config.layer_sizes() {
                return Err(Error::Contract("ensemble members differ in architecture".into()));
            }
            m.check()?;
        }
        Ok(())
    }
}

/// Trains `n_members` copies of `config`; member `k` uses seed
/// `derive_seed(master_seed, [k])`, which sets both its initialization and
/// its batch order.
pub fn train_ensemble(
    train: &Samples<'_>,
    valid: &Samples<'_>,
    config: &MlpConfig,
    n_members: usize,
    master_seed: u64,
) -> Result<DeepEnsemble> {
    train_members(train, valid, config, n_members, master_seed, true)
}

pub(crate) fn train_members(
    train: &Samples<'_>,
    valid: &Samples<'_>,
    config: &MlpConfig,
    n_members: usize,
    master_seed: u64,
    parallel: bool,
) -> Result<DeepEnsemble> {
    if n_members == 0 {
        return Err(Error::InvalidParams("an ensemble needs at least one member".into()));
    }
    let fit = |k: usize| {
        let cfg = MlpConfig {
            seed: derive_seed(master_seed, &[k as u64]),
            ..config.clone()
        };
        train_mlp(train, valid, &cfg)
    };
    let results: Vec<Result<TrainedMlp>> = if parallel {
        (0..n_members).into_par_iter().map(fit).collect()
    } else {
        (0..n_members).map(fit).collect()
    };
    let mut members = Vec::with_capacity(n_members);
    let mut failed = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => members.push(m),
            Err(e) => failed.push((k, e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble(failed));
    }
    Ok(DeepEnsemble {
        config: config.clone(),
        members,
    })
}

/// Mean of the member probabilities.
pub fn predict_ensemble(e: &DeepEnsemble, x: &Fingerprint) -> Result<f64> {
    let mut total = 0.0;
    for m in &e.members {
        total += m.predict(x)?;
    }
    Ok(total / e.members.len() as f64)
}

pub fn predict_ensemble_all(e: &DeepEnsemble, xs: &[&Fingerprint]) -> Result<Vec<f64>> {
    xs.iter().map(|x| predict_ensemble(e, x)).collect()
}

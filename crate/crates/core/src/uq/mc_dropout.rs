use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, CheckpointKind, DropoutMask, TrainedMlp};
use crate::rng::stream;

pub const DEFAULT_PASSES: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDropoutModel {
    pub base: TrainedMlp,
    pub n_passes: usize,
    /// Seed of the inference masks; pass `k` draws from `stream(seed, [k])`.
    pub seed: u64,
}

impl McDropoutModel {
    pub fn new(base: TrainedMlp, n_passes: usize, seed: u64) -> Result<Self> {
        if n_passes == 0 {
            return Err(Error::InvalidParams("MC dropout needs at least one pass".into()));
        }
        Ok(Self { base, n_passes, seed })
    }

    fn masks(&self) -> Vec<DropoutMask> {
        let widths = self.base.network.hidden_widths();
        (0..self.n_passes)
            .map(|k| DropoutMask::sample(&widths, self.base.config.dropout_rate, &mut stream(self.seed, &[k as u64])))
            .collect()
    }
}

impl CheckpointKind for McDropoutModel {
    const KIND: &'static str = "mc_dropout";

    fn check(&self) -> Result<()> {
        if self.n_passes == 0 {
            return Err(Error::Contract("MC dropout model with zero passes".into()));
        }
        self.base.check()
    }
}

/// Probability of every pass for each input: `out[i][k]` is pass `k` on
/// `xs[i]`. Masks are shared across inputs, so each pass is one sampled
/// sub-network.
pub fn mc_pass_probs(m: &McDropoutModel, xs: &[&Fingerprint]) -> Result<Vec<Vec<f64>>> {
    let masks = m.masks();
    xs.par_iter()
        .map(|x| {
            let first = m.base.network.first_layer(x)?;
            masks
                .iter()
                .map(|mask| {
                    let z = m.base.network.logit_from_first(&first, Some(mask));
                    if z.is_finite() {
                        Ok(sigmoid(z))
                    } else {
                        Err(Error::Numerical(format!("non-finite logit {z}")))
                    }
                })
                .collect()
        })
        .collect()
}

pub fn predict_mc_dropout_all(m: &McDropoutModel, xs: &[&Fingerprint]) -> Result<Vec<f64>> {
    if m.base.config.dropout_rate == 0.0 {
        return m.base.predict_all(xs);
    }
    Ok(mc_pass_probs(m, xs)?
        .into_iter()
        .map(|p| p.iter().sum::<f64>() / p.len() as f64)
        .collect())
}

/// Mean train-mode probability over `n_passes` dropout masks.
pub fn predict_mc_dropout(m: &McDropoutModel, x: &Fingerprint) -> Result<f64> {
    Ok(predict_mc_dropout_all(m, &[x])?[0])
}

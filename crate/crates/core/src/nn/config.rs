use serde::{Deserialize, Serialize};

use crate::dataio::DEFAULT_FP_LEN;
use crate::error::{Error, Result};

/// Narrowest layer produced by the halving schedule.
pub const MIN_DECREASING_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    /// Halve the width at each successive hidden layer.
    pub decreasing_dims: bool,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub scheduler_factor: f64,
    pub max_epochs: usize,
    pub patience_early_stop: usize,
    pub patience_scheduler: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_dim: DEFAULT_FP_LEN,
            hidden_dim: 128,
            n_hidden_layers: 2,
            decreasing_dims: false,
            dropout_rate: 0.25,
            weight_decay: 0.0,
            learning_rate: 1e-4,
            scheduler_factor: 0.5,
            max_epochs: 500,
            patience_early_stop: 20,
            patience_scheduler: 10,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl MlpConfig {
    /// Layer widths from input to the single output unit.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        let mut width = self.hidden_dim;
        for layer in 0..self.n_hidden_layers {
            if self.decreasing_dims && layer > 0 {
                width = (width / 2).max(MIN_DECREASING_WIDTH.min(self.hidden_dim));
            }
            sizes.push(width);
        }
        sizes.push(1);
        sizes
    }

    /// Structural sanity needed for training at all.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_hidden_layers == 0 {
            return bad("input_dim, hidden_dim and n_hidden_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor <= 1.0) {
            return bad(format!("scheduler_factor {} outside (0, 1]", self.scheduler_factor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// The tuned ranges explored for the published baselines.
    pub fn check_search_ranges(&self) -> Result<()> {
        self.validate()?;
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(64..=512).contains(&self.hidden_dim) {
            return bad(format!("hidden_dim {} outside [64, 512]", self.hidden_dim));
        }
        if !(2..=5).contains(&self.n_hidden_layers) {
            return bad(format!("n_hidden_layers {} outside [2, 5]", self.n_hidden_layers));
        }
        if self.dropout_rate > 0.75 {
            return bad(format!("dropout_rate {} above 0.75", self.dropout_rate));
        }
        if self.weight_decay > 5e-4 {
            return bad(format!("weight_decay {} above 5e-4", self.weight_decay));
        }
        if self.scheduler_factor != 0.1 && self.scheduler_factor != 0.5 {
            return bad(format!("scheduler_factor {} not in {{0.1, 0.5}}", self.scheduler_factor));
        }
        Ok(())
    }
}

/// Axis values of an exhaustive MLP grid. Every other field is taken from
/// `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpGrid {
    pub hidden_dim: Vec<usize>,
    pub n_hidden_layers: Vec<usize>,
    pub dropout_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub decreasing_dims: Vec<bool>,
    pub scheduler_factor: Vec<f64>,
}

impl Default for MlpGrid {
    fn default() -> Self {
        Self {
            hidden_dim: vec![64, 128, 256, 512],
            n_hidden_layers: vec![2, 3, 4, 5],
            dropout_rate: vec![0.0, 0.25, 0.5, 0.75],
            weight_decay: vec![0.0, 5e-4],
            decreasing_dims: vec![false, true],
            scheduler_factor: vec![0.1, 0.5],
        }
    }
}

impl MlpGrid {
    /// Cartesian product in a fixed nesting order (hidden_dim outermost).
    pub fn expand(&self, base: &MlpConfig) -> Vec<MlpConfig> {
        let mut out = Vec::new();
        for &hidden_dim in &self.hidden_dim {
            for &n_hidden_layers in &self.n_hidden_layers {
                for &dropout_rate in &self.dropout_rate {
                    for &weight_decay in &self.weight_decay {
                        for &decreasing_dims in &self.decreasing_dims {
                            for &scheduler_factor in &self.scheduler_factor {
                                out.push(MlpConfig {
                                    hidden_dim,
                                    n_hidden_layers,
                                    dropout_rate,
                                    weight_decay,
                                    decreasing_dims,
                                    scheduler_factor,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn default_mlp_grid(base: &MlpConfig) -> Vec<MlpConfig> {
    MlpGrid::default().expand(base)
}

//! Random forest of CART trees on binary fingerprints.
//!
//! Trees grow on bootstrap resamples with Gini splits over a random subset of
//! bits at each node. The forest probability is the fraction of trees whose
//! leaf majority is the preferred class.

mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::metrics::bce_loss;
use crate::nn::{CheckpointKind, Samples};
use crate::rng::stream;

pub use tree::{best_split, grow_tree, Split, Tree, LEAF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `floor(sqrt(d))`, at least 1.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::All => d,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Root is depth 0; `max_depth = 0` gives single-leaf trees.
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_estimators: 500,
            max_depth: 10_000,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::InvalidParams("n_estimators must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }

    /// The tuned ranges explored for the published baselines.
    pub fn check_search_ranges(&self) -> Result<()> {
        self.validate()?;
        if !(50..=1500).contains(&self.n_estimators) {
            return Err(Error::InvalidParams(format!("n_estimators {} outside [50, 1500]", self.n_estimators)));
        }
        if !(5..=10_000).contains(&self.max_depth) {
            return Err(Error::InvalidParams(format!("max_depth {} outside [5, 10000]", self.max_depth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
}

impl Default for ForestGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![50, 250, 500, 1000, 1500],
            max_depth: vec![5, 20, 100, 10_000],
        }
    }
}

impl ForestGrid {
    /// Cartesian product, n_estimators outermost.
    pub fn expand(&self, base: &ForestConfig) -> Vec<ForestConfig> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                out.push(ForestConfig {
                    n_estimators,
                    max_depth,
                    ..base.clone()
                });
            }
        }
        out
    }
}

pub fn default_forest_grid(base: &ForestConfig) -> Vec<ForestConfig> {
    ForestGrid::default().expand(base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// The training labels had a single class, so every tree is constant.
    pub single_class: bool,
}

impl CheckpointKind for TrainedForest {
    const KIND: &'static str = "forest";

    fn check(&self) -> Result<()> {
        if self.trees.len() != self.config.n_estimators {
            return Err(Error::Contract("tree count does not match n_estimators".into()));
        }
        for t in &self.trees {
            t.check(self.n_features, self.config.max_depth)?;
        }
        Ok(())
    }
}

/// Tree `k` draws its bootstrap sample and feature order from
/// `stream(config.seed, [k])`.
pub fn train_forest(train: &Samples<'_>, config: &ForestConfig) -> Result<TrainedForest> {
    config.validate()?;
    let Some(d) = train.input_dim() else {
        return Err(Error::InsufficientData("empty training set".into()));
    };
    if let Some(x) = train.fps.iter().find(|x| x.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: x.len(),
        });
    }
    let n_pos = train.labels.iter().filter(|&&y| y).count();
    let single_class = n_pos == 0 || n_pos == train.len();
    let trees = (0..config.n_estimators)
        .into_par_iter()
        .map(|k| grow_tree(train, config, &mut stream(config.seed, &[k as u64])))
        .collect();
    Ok(TrainedForest {
        config: config.clone(),
        n_features: d,
        trees,
        single_class,
    })
}

/// Fraction of trees voting for the preferred class.
pub fn predict_forest(f: &TrainedForest, x: &Fingerprint) -> Result<f64> {
    if x.len() != f.n_features {
        return Err(Error::Dimension {
            expected: f.n_features,
            actual: x.len(),
        });
    }
    let votes = f.trees.iter().filter(|t| t.votes_preferred(x)).count();
    Ok(votes as f64 / f.trees.len() as f64)
}

pub fn predict_forest_all(f: &TrainedForest, xs: &[&Fingerprint]) -> Result<Vec<f64>> {
    xs.iter().map(|x| predict_forest(f, x)).collect()
}

/// Grid search over forest configurations by validation BCE of the vote
/// fraction. Candidate `i` uses seed `derive_seed(seed, [i])`.
pub fn search_forest(
    space: &[ForestConfig],
    train: &Samples<'_>,
    valid: &Samples<'_>,
    seed: u64,
) -> Result<crate::nn::SearchOutcome<ForestConfig, TrainedForest>> {
    let seeded: Vec<ForestConfig> = space
        .iter()
        .enumerate()
        .map(|(i, c)| ForestConfig {
            seed: crate::rng::derive_seed(seed, &[i as u64]),
            ..c.clone()
        })
        .collect();
    crate::nn::grid_search(&seeded, |_, c| {
        let f = train_forest(train, c)?;
        let loss = bce_loss(&predict_forest_all(&f, &valid.fps)?, &valid.labels)?;
        Ok((f, loss))
    })
}

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationMethod;
use crate::dataio::{AssaySpec, Direction, ParseMode, SynthParams, Transform, DEFAULT_FP_LEN};
use crate::error::{Error, Result};
use crate::forest::{ForestConfig, ForestGrid};
use crate::nn::{MlpConfig, MlpGrid};
use crate::uq::{DEFAULT_MEMBERS, DEFAULT_PASSES};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rf,
    Mlp,
    Mlpe,
    Mlpmc,
    Bnn,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Rf, Family::Mlp, Family::Mlpe, Family::Mlpmc, Family::Bnn];

    pub fn key(self) -> &'static str {
        match self {
            Family::Rf => "rf",
            Family::Mlp => "mlp",
            Family::Mlpe => "mlpe",
            Family::Mlpmc => "mlpmc",
            Family::Bnn => "bnn",
        }
    }

    /// Report name, e.g. `MLPE`.
    pub fn label(self) -> &'static str {
        match self {
            Family::Rf => "RF",
            Family::Mlp => "MLP",
            Family::Mlpe => "MLPE",
            Family::Mlpmc => "MLPMC",
            Family::Bnn => "BNN",
        }
    }

    /// Families whose hyperparameters come from the MLP grid search.
    pub fn uses_mlp_grid(self) -> bool {
        self != Family::Rf
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One assay: either a CSV file with a labelling rule, or a synthetic
/// generator with its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssayConfig {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub transform: Option<Transform>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub synth: Option<SynthParams>,
    #[serde(default)]
    pub synth_seed: u64,
}

impl AssayConfig {
    pub fn spec(&self) -> Result<AssaySpec> {
        if let Some(synth) = &self.synth {
            return Ok(AssaySpec {
                name: self.name.clone(),
                ..synth.assay_spec()
            });
        }
        let missing = |field: &str| Error::Config(format!("assay {}: missing {field}", self.name));
        let spec = AssaySpec {
            name: self.name.clone(),
            transform: self.transform.ok_or_else(|| missing("transform"))?,
            threshold: self.threshold.ok_or_else(|| missing("threshold"))?,
            direction: self.direction.ok_or_else(|| missing("direction"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("assay name must not be empty".into()));
        }
        match (&self.path, &self.synth) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "assay {}: give either path or synth, not both",
                self.name
            ))),
            (None, None) => Err(Error::Config(format!("assay {}: needs a path or synth table", self.name))),
            (None, Some(p)) => p
                .validate()
                .map_err(|e| Error::Config(format!("assay {}: {e}", self.name))),
            (Some(_), None) => self.spec().map(|_| ()),
        }
    }
}

/// Optimizer and stopping settings shared by every network family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience_early_stop: usize,
    pub patience_scheduler: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let m = MlpConfig::default();
        Self {
            learning_rate: m.learning_rate,
            max_epochs: m.max_epochs,
            patience_early_stop: m.patience_early_stop,
            patience_scheduler: m.patience_scheduler,
            batch_size: m.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub ensemble_members: usize,
    pub mc_passes: usize,
    pub bnn_prior_sigma: f64,
    pub bnn_train_samples: usize,
    pub bnn_valid_samples: usize,
    pub bnn_infer_samples: usize,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            ensemble_members: DEFAULT_MEMBERS,
            mc_passes: DEFAULT_PASSES,
            bnn_prior_sigma: 1.0,
            bnn_train_samples: 1,
            bnn_valid_samples: 100,
            bnn_infer_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub mlp: MlpGrid,
    pub rf: ForestGrid,
    /// Fixed forest settings that the grid does not vary.
    pub rf_base: ForestConfig,
}

fn default_repetitions() -> usize {
    10
}

fn default_settings() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_models() -> Vec<Family> {
    Family::ALL.to_vec()
}

fn default_calibrators() -> Vec<CalibrationMethod> {
    CalibrationMethod::ALL.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_fp_len() -> usize {
    DEFAULT_FP_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_repetitions")]
    pub n_repetitions: usize,
    #[serde(default = "default_settings")]
    pub settings: Vec<usize>,
    #[serde(default = "default_models")]
    pub models: Vec<Family>,
    #[serde(default = "default_calibrators")]
    pub calibrators: Vec<CalibrationMethod>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub parse_mode: ParseMode,
    /// Expected fingerprint length of CSV assays.
    #[serde(default = "default_fp_len")]
    pub fp_len: usize,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub jobs: usize,
    pub assays: Vec<AssayConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub uq: UqConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative assay paths and the output directory are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut config.assays {
            if let Some(p) = &a.path {
                if p.is_relative() {
                    a.path = Some(base.join(p));
                }
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.n_repetitions == 0 {
            return bad("n_repetitions must be at least 1".into());
        }
        if self.assays.is_empty() || self.settings.is_empty() || self.models.is_empty() || self.calibrators.is_empty() {
            return bad("assays, settings, models and calibrators must all be non-empty".into());
        }
        if let Some(s) = self.settings.iter().find(|s| !(1..=3).contains(*s)) {
            return bad(format!("setting {s} is not one of 1, 2, 3"));
        }
        if has_duplicates(&self.settings) || has_duplicates(&self.models) || has_duplicates(&self.calibrators) {
            return bad("settings, models and calibrators must not repeat".into());
        }
        let names: Vec<&str> = self.assays.iter().map(|a| a.name.as_str()).collect();
        if has_duplicates(&names) {
            return bad("assay names must be unique".into());
        }
        for a in &self.assays {
            a.validate()?;
        }
        if self.fp_len == 0 {
            return bad("fp_len must be positive".into());
        }
        let uq = &self.uq;
        if uq.ensemble_members == 0 || uq.mc_passes == 0 || uq.bnn_train_samples == 0 || uq.bnn_valid_samples == 0 || uq.bnn_infer_samples == 0 {
            return bad("uq sample and member counts must be positive".into());
        }
        if !(uq.bnn_prior_sigma > 0.0 && uq.bnn_prior_sigma.is_finite()) {
            return bad("bnn_prior_sigma must be positive".into());
        }
        if self.models.iter().any(|f| f.uses_mlp_grid()) {
            let g = &self.grid.mlp;
            if g.hidden_dim.is_empty()
                || g.n_hidden_layers.is_empty()
                || g.dropout_rate.is_empty()
                || g.weight_decay.is_empty()
                || g.decreasing_dims.is_empty()
                || g.scheduler_factor.is_empty()
            {
                return bad("every [grid.mlp] axis needs at least one value".into());
            }
            for c in self.mlp_space(16) {
                c.validate().map_err(|e| Error::Config(format!("[grid.mlp]: {e}")))?;
            }
            if self.models.contains(&Family::Mlpmc) && !g.dropout_rate.iter().any(|&p| p > 0.0) {
                return bad("mlpmc needs a dropout_rate above 0 in [grid.mlp]".into());
            }
        }
        if self.models.contains(&Family::Rf) {
            if self.grid.rf.n_estimators.is_empty() || self.grid.rf.max_depth.is_empty() {
                return bad("every [grid.rf] axis needs at least one value".into());
            }
            for c in self.forest_space() {
                c.validate().map_err(|e| Error::Config(format!("[grid.rf]: {e}")))?;
            }
        }
        let t = &self.training;
        if t.batch_size == 0 || !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("[training] needs a positive batch_size and learning_rate".into());
        }
        Ok(())
    }

    pub fn base_mlp(&self, input_dim: usize) -> MlpConfig {
        let t = &self.training;
        MlpConfig {
            input_dim,
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            patience_early_stop: t.patience_early_stop,
            patience_scheduler: t.patience_scheduler,
            batch_size: t.batch_size,
            ..MlpConfig::default()
        }
    }

    pub fn mlp_space(&self, input_dim: usize) -> Vec<MlpConfig> {
        self.grid.mlp.expand(&self.base_mlp(input_dim))
    }

    pub fn forest_space(&self) -> Vec<ForestConfig> {
        self.grid.rf.expand(&self.grid.rf_base)
    }
}

fn has_duplicates<T: Ord>(items: &[T]) -> bool {
    items.iter().collect::<BTreeSet<_>>().len() != items.len()
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measurement {0}: value must be finite and strictly positive")]
    InvalidMeasurement(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid temporal setting {0}; expected 1, 2 or 3")]
    InvalidSetting(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("grid search failed for all {} candidates: {}", .0.len(), format_causes(.0))]
    SearchFailed(Vec<(usize, String)>),

    #[error("ensemble training failed for members {}", format_causes(.0))]
    Ensemble(Vec<(usize, String)>),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_causes(causes: &[(usize, String)]) -> String {
    causes
        .iter()
        .map(|(i, c)| format!("[{i}] {c}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("impact line does not intersect the helmet sphere")]
    NoIntersection,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("simulation diverged at t = {time_s} s")]
    SimulationDiverged { time_s: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error in {}{}: {message}", file.display(), row.map(|r| format!(" row {r}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        row: Option<usize>,
        message: String,
    },

    #[error("model format version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<PathBuf>, row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            row,
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidState(_) => "invalid-state",
            Error::NoIntersection => "no-intersection",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::SimulationDiverged { .. } => "simulation-diverged",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Parse { .. } => "parse",
            Error::ModelVersion { .. } => "model-version",
            Error::MissingModel(_) => "missing-model",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range for {what}: {detail}")]
    InvalidRange { what: &'static str, detail: String },

    #[error("timestep {t} outside [{lo}, {hi}]")]
    StepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },

    #[error("index {index} in group `{group}` is outside [0, {dim})")]
    IndexOutOfRange { group: String, index: usize, dim: usize },

    #[error("index {index} appears in both `{first}` and `{second}`")]
    OverlappingGroups {
        index: usize,
        first: String,
        second: String,
    },

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("step size gamma must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("need 0 <= tau1 < tau2 <= 1, got tau1={tau1}, tau2={tau2}")]
    InvalidTauOrder { tau1: f64, tau2: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("run failed for policy `{policy}` seed {seed}: {source}")]
    Run {
        policy: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("kalman filter diverged: covariance is not positive definite (track {track})")]
    FilterDivergence { track: u64 },

    #[error("no dominant frame: {0}")]
    NoDominantFrame(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("pose ({x:.3}, {y:.3}) lies inside solid geometry")]
    PoseInSolid { x: f64, y: f64 },

    #[error("stage `{stage}` panicked while processing frame at t={timestamp:.6}s")]
    StagePanic { stage: &'static str, timestamp: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

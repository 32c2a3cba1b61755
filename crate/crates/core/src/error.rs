use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("window unavailable: t={t}, k={k} needs observations up to {} but trajectory length is {len}", t + k - 1)]
    WindowUnavailable { t: usize, k: usize, len: usize },

    #[error("offset {offset} out of range for window length {k}")]
    OffsetOutOfRange { offset: usize, k: usize },

    #[error("trajectory {index} too short: length {len}, need at least {required}")]
    TrajectoryTooShort {
        index: usize,
        len: usize,
        required: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rollout diverged at t={t}")]
    Diverged { t: usize },

    #[error(
        "riccati iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error(
        "system is not {k}-observable (observability rank {rank} < state dimension {state_dim})"
    )]
    NotObservable {
        k: usize,
        rank: usize,
        state_dim: usize,
    },

    #[error("model checksum mismatch: stored {stored}, regenerated {computed}")]
    Checksum { stored: String, computed: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
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
}

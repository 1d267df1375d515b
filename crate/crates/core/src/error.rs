use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FcapaError>;

#[derive(Debug, Error)]
pub enum FcapaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point ({u}, {v}) lies outside the parameter domain")]
    OutOfDomain { u: f64, v: f64 },

    #[error("Green's function singularity: observation point coincides with source point {0:?}")]
    Singularity([f64; 3]),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("degenerate solver state: {0}")]
    DegenerateState(String),

    #[error("linear system is numerically singular (condition estimate {0:e})")]
    Conditioning(f64),

    #[error("channel matrix is rank deficient ({users} users, {antennas} antennas)")]
    RankDeficient { users: usize, antennas: usize },

    #[error("non-finite objective at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FcapaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: impl Into<std::io::Error>) -> Self {
        FcapaError::Io {
            path: path.into(),
            source: source.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        FcapaError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

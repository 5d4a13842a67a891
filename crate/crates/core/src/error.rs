use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instrument row {row} of the noisy effect matrix has zero norm after {attempts} attempts")]
    ZeroRow { row: usize, attempts: usize },

    #[error("invalid instrument set: {0}")]
    InvalidInstrumentSet(String),

    #[error("insufficient samples: need at least {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("first stage has no singular value above tolerance (instruments show no detectable effect)")]
    RankZero,

    #[error("singular matrix: {0}")]
    SingularMatrix(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coordinate {coordinate} out of range for dimension {dim}")]
    CoordinateOutOfRange { coordinate: usize, dim: usize },

    #[error("candidate set overlaps used instruments at index {0}")]
    Overlap(usize),

    #[error("no candidate instruments remain")]
    EmptyCandidates,

    #[error("negative norm estimate {0}")]
    NegativeNorm(f64),

    #[error("rank-deficient scenario after {0} regeneration attempts")]
    RankDeficient(usize),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{} of {} replicates failed (limit 1%)", failed, total)]
    TooManyFailures { failed: usize, total: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix shape: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is rank deficient: |R[{index}][{index}]| = {value:e} below threshold {threshold:e}")]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("vector {index} has zero variance")]
    ZeroVariance { index: usize },

    #[error("degenerate covariance: all points coincide")]
    DegenerateCovariance,

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at step {step}")]
    NonFiniteStep { step: usize },

    #[error("invalid step path: {0}")]
    InvalidPath(String),

    #[error(
        "least-squares system is underdetermined: {rows} equations for {cols} unknowns; \
         record more trajectories (K) or use a larger latent dimension (d)"
    )]
    Underdetermined { rows: usize, cols: usize },

    #[error("trajectories were recorded with a stochastic schedule; OLSS training needs sigma = 0")]
    StochasticTrajectories,

    #[error("sampler run and teacher trajectory start from different x_T")]
    ProvenanceMismatch,

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("{path}: blob holds vectors of dimension {found}, manifest says {expected}")]
    BlobDimensionMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: truncated or oversized blob ({actual} bytes, expected {expected})")]
    TruncatedBlob {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("malformed scheduler file: field `{field}`: {reason}")]
    MalformedScheduler { field: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch { op: &'static str, expected: String, found: String },

    #[error("{0}: non-finite matrix entry")]
    NonFinite(&'static str),

    #[error("subspace rank {rank} exceeds feature dimension {dim}")]
    RankTooLarge { rank: usize, dim: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("feature column {0} is zero and cannot be normalized")]
    ZeroFeatureColumn(usize),

    #[error("feature covariance block of device {0} is singular")]
    SingularFeatureBlock(usize),

    #[error("no bisection bracket for the power multiplier after {0} doublings")]
    BisectionFailed(usize),

    #[error("zero diagonal entry at index {index}")]
    ZeroDiagonal { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

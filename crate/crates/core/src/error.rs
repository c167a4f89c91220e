use thiserror::Error;

#[derive(Debug, Error)]
pub enum RsrError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank deficient: numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("insufficient rank: data matrix has numerical rank {rank} < d = {d}")]
    InsufficientRank { rank: usize, d: usize },

    #[error("geodesic not unique: largest principal angle {theta} is too close to pi/2")]
    GeodesicNotUnique { theta: f64 },

    #[error("direction undefined: the two subspaces coincide")]
    DirectionUndefined,

    #[error("non-finite value in point {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset carries no ground-truth subspace")]
    MissingGroundTruth,

    #[error("SNR undefined: dataset has no outliers")]
    SnrUndefined,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RsrError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RsrError::InvalidParameter(msg.into())
    }

    /// True for failures reading or writing files, including malformed file contents.
    pub fn is_io(&self) -> bool {
        matches!(self, RsrError::Io(_) | RsrError::Json(_) | RsrError::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, RsrError>;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite accumulation while evaluating block {block}")]
    NonFiniteBlock { block: u64 },

    #[error("divergence at iteration {iteration}: max |h| = {max_abs_h}")]
    Divergence { iteration: u64, max_abs_h: f64 },

    #[error("rank deficient input: {0}")]
    RankDeficient(String),

    #[error("not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("quadrature grid too coarse: top eigenvalues moved by {relative_shift:.3e} when the grid doubled; use a grid larger than {grid_size}")]
    GridTooCoarse { grid_size: usize, relative_shift: f64 },

    #[error("empty data")]
    EmptyData,

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

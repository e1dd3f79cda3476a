use thiserror::Error;

/// Errors raised by the tensor kernels and decomposition engines.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank {rank} exceeds dimension {dim} in mode {mode}")]
    RankExceedsDimension { mode: usize, rank: usize, dim: usize },

    #[error("effective rank collapsed to zero ({0})")]
    ZeroRank(String),

    #[error("fit is undefined for a reference tensor with zero norm")]
    ZeroNorm,

    #[error("input must be entrywise nonnegative (found {value} at flat index {index})")]
    Negative { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

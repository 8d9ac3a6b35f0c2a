use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index ({row}, {col}) out of bounds for dimension {dim}")]
    IndexOutOfBounds { row: usize, col: usize, dim: usize },

    #[error("duplicate entry ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("matrix must have positive dimensions")]
    EmptyMatrix,

    #[error("negative noise variance {value} at chip {index}")]
    NegativeNoise { index: usize, value: f64 },

    #[error("zero diagonal entry at index {index}")]
    ZeroDiagonal { index: usize },

    #[error("zero cavity precision on edge {from} -> {to} at iteration {iteration}")]
    ZeroCavityPrecision {
        iteration: usize,
        from: usize,
        to: usize,
    },

    #[error("zero posterior precision at node {index}")]
    ZeroPosteriorPrecision { index: usize },

    #[error("non-finite message on edge {from} -> {to} at iteration {iteration}")]
    NonFiniteMessage {
        iteration: usize,
        from: usize,
        to: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("message support mismatch: {0}")]
    SupportMismatch(String),

    #[error("zero precision message {side} on edge ({user}, {chip})")]
    ZeroPrecisionMessage {
        side: &'static str,
        user: usize,
        chip: usize,
    },

    #[error("singular matrix")]
    Singular,

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("csv output failed: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

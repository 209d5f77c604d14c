//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },

    #[error("negative entry {value} at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("location index {index} out of range for {m} locations")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("evaluation point is not interior: entry {index} = {value}")]
    NonInteriorPoint { index: usize, value: f64 },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("stream entry at t={t}, l={l} is not a nonnegative integer: {value}")]
    NonIntegerStream { t: usize, l: usize, value: f64 },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

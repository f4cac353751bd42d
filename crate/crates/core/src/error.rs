//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("row {row} has norm {norm:e} below eps {eps:e}")]
    RowNormBelowEps { row: usize, norm: f64, eps: f64 },

    #[error("column {col} has norm {norm:e} below eps {eps:e}")]
    ColNormBelowEps { col: usize, norm: f64, eps: f64 },

    #[error("norm {norm:e} within 10*eps of zero; normalization gradient is unreliable")]
    NearDegenerateNorm { norm: f64 },

    #[error("matrix is not symmetric (|a_ij - a_ji| = {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("Jacobi eigen-solver did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("batch of {got} rows is too small (need at least {need})")]
    BatchTooSmall { got: usize, need: usize },

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("too few dimensions: {got} (need at least {need})")]
    TooFewDims { got: usize, need: usize },

    #[error("matrix has no spread (all singular values are zero)")]
    ZeroMatrix,

    #[error("invalid layer dimension chain: {0}")]
    BadDimChain(String),

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("invalid split fractions: {0:?}")]
    BadFractions(Vec<f64>),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

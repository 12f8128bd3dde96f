//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Matrix product with incompatible shapes.
    #[error("shape mismatch: cannot combine {left_rows}x{left_cols} with {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric at ({i},{j}): |a_ij - a_ji| = {delta:e}")]
    NotSymmetric { i: usize, j: usize, delta: f64 },

    /// Jacobi sweep budget exhausted before the off-diagonal norm dropped
    /// below tolerance.
    #[error("eigensolver did not converge within {sweeps} sweeps; off-diagonal norm {residual:e}")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Partitioner asked for more samples of a label than the pool holds.
    #[error("insufficient samples for label {label}: need {needed}, have {available}")]
    Capacity {
        label: usize,
        needed: usize,
        available: usize,
    },

    #[error("IDX format error in {path}: {detail}")]
    IdxFormat { path: PathBuf, detail: String },

    #[error("count mismatch between IDX files: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Local training produced a NaN/Inf loss or gradient.
    #[error("training diverged at round {round}, client {client}, epoch {epoch}, step {step}")]
    Diverged {
        round: usize,
        client: usize,
        epoch: usize,
        step: usize,
    },

    #[error("aggregation weights must sum to 1, got {sum}")]
    WeightSum { sum: f64 },

    #[error("row {row} has zero norm and cannot be normalized")]
    DegenerateRow { row: usize },

    #[error("cluster {cluster} is empty")]
    EmptyCluster { cluster: usize },

    /// Configuration file / experiment setup problem, naming the offending field.
    #[error("config error: field `{field}`: {msg}")]
    Config { field: String, msg: String },
}

impl Error {
    /// Shorthand for [`Error::Contract`].
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Shorthand for [`Error::Config`].
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}

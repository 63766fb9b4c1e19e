//! Error type shared by every module in this crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: row {row} has {found} entries, expected {expected}")]
    NotSquare {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("{what} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} must lie in [0, 1], got {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("partition is empty or has a zero-sized class")]
    EmptyClass,

    #[error("class label {label} out of range for {classes} classes")]
    ClassOutOfRange { label: usize, classes: usize },

    #[error("node {node} out of range for {n_total} nodes")]
    NodeOutOfRange { node: usize, n_total: usize },

    #[error("duplicate seed node {node}")]
    DuplicateSeed { node: usize },

    #[error("infectious period m must be at least 1")]
    ZeroInfectiousPeriod,

    #[error(
        "hard constraint is infeasible: best attainable expected transfer {attainable} \
         is below the required {required}; use the softened objective instead"
    )]
    InfeasibleStep { required: f64, attainable: f64 },

    #[error("solver did not converge within {iterations} iterations (residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no cascades labeled {label:?} in the input")]
    InsufficientData { label: crate::fit::ContentLabel },

    #[error("cascade record has no transfer log; regenerate it with transfer logging enabled")]
    MissingTransferLog,

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

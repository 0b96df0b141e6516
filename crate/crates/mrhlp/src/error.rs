//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error enum.
///
/// Errors split into two broad families: data errors (malformed input,
/// dimension mismatches, parse failures) and numerical errors (singular
/// systems, failed restarts). [`Error::exit_code`] maps the family onto
/// the process exit codes used by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time stamps must be strictly increasing: violation at index {index}")]
    NonIncreasingTime { index: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("series must contain at least one observation")]
    EmptySeries,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid hyperparameters: {reason}")]
    InvalidHyperparams { reason: String },

    #[error("invalid options: {reason}")]
    InvalidOptions { reason: String },

    #[error("invalid model: {reason}")]
    InvalidModel { reason: String },

    #[error("covariance matrix of regime {regime} is not positive definite")]
    NonPdCovariance { regime: usize },

    #[error("rank-deficient design matrix for regime {regime}")]
    RankDeficientDesign { regime: usize },

    #[error("singular Hessian in the logistic weight update (degenerate covariates)")]
    SingularHessian,

    #[error("all {attempts} restarts failed; last error: {last}")]
    AllRestartsFailed { attempts: usize, last: String },

    #[error("label vectors have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("too many classes for label matching: {classes} (limit {limit})")]
    TooManyClasses { classes: usize, limit: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("ragged row at line {line}: expected {expected} fields, got {actual}")]
    RaggedRow {
        line: usize,
        expected: usize,
        actual: usize,
    },

    #[error("malformed document: {0}")]
    MalformedDocument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 2 for data errors, 3 for numerical failures.
    /// (Usage errors exit with 1 and never reach this enum.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonPdCovariance { .. }
            | Error::RankDeficientDesign { .. }
            | Error::SingularHessian
            | Error::AllRestartsFailed { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

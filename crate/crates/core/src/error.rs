use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty file: {path}")]
    EmptyFile { path: PathBuf },

    #[error("non-numeric cell in {path} at row {row}, column {col}: {value:?}")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("non-finite value in {path} at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },

    #[error("ragged csv in {path} at row {row}: expected {expected} columns, found {found}")]
    Ragged {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row-count mismatch: {path} has {found} rows, expected {expected}")]
    RowCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular design (reciprocal condition {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("degenerate regression: standard error of coordinate {index} is not positive")]
    DegenerateRegression { index: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("projection direction problem infeasible at lambda={lambda:.6} (max violation {violation:.3e})")]
    Infeasible { lambda: f64, violation: f64 },

    #[error(
        "solver did not converge after {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("no feasible projection direction after {escalations} escalations (last lambda {last_lambda:.4})")]
    NoFeasibleDirection { escalations: usize, last_lambda: f64 },

    #[error("problem too large for the reference solver: d={d}, n={n} (limits d<=25, n<=60)")]
    TooLarge { d: usize, n: usize },

    #[error("{failures} of {reps} replications failed; aborting (first failure: {first})")]
    TooManyFailures {
        failures: usize,
        reps: usize,
        first: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Errors caused by malformed input or configuration, as opposed to
    /// numerical or solver failures on otherwise valid input.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::EmptyFile { .. }
            | Error::NonNumeric { .. }
            | Error::NonFinite { .. }
            | Error::Ragged { .. }
            | Error::RowCountMismatch { .. }
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::TooLarge { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

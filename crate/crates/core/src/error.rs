use thiserror::Error;

/// Errors produced by the model-learning pipeline.
///
/// Integrator breakdowns are deliberately *not* represented here: a trajectory
/// that blows up or violates its state bound is a first-class outcome recorded
/// in [`crate::rom::TrajectoryStatus`], because the regularization search
/// consumes it as a disqualification signal rather than a failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain error for variable '{variable}' at column {column}: {reason}")]
    Domain {
        variable: String,
        column: usize,
        reason: String,
    },

    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("matrix is not positive definite (pivot {pivot} failed)")]
    NotPositiveDefinite { pivot: usize },

    #[error("least-squares system is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error(
        "over-parameterized regression: d(r,m) = {d} >= k = {k}; \
         reduce r or provide more snapshots"
    )]
    OverParameterized { d: usize, k: usize },

    #[error(
        "every candidate on the regularization grid was disqualified; \
         widen the lambda ranges or increase the bound margin tau"
    )]
    AllCandidatesDisqualified,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("bad matrix file: {0}")]
    BadMatrixFile(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

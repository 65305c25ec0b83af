use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure classes. The CLI maps these onto distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input: bad dimensions, parse errors, ties.
    Input,
    /// Rank deficiency, loss of positive definiteness, domain violations.
    Numerical,
    /// An iterative solver or simulation did not reach its target.
    Convergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("tied values in column {column}; continuous margins are required")]
    Ties { column: usize },

    #[error("singular constraint at theta = {theta:?}: Jacobian rank {rank}, expected {expected}")]
    SingularConstraint {
        theta: Vec<f64>,
        rank: usize,
        expected: usize,
    },

    #[error("rank-deficient {what}: rank {rank}, expected {expected}")]
    RankDeficient {
        what: String,
        rank: usize,
        expected: usize,
    },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("outside the constraint domain: {0}")]
    Domain(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("{failures} of {reps} replications failed (limit 1%): {first}")]
    TooManyFailures {
        failures: usize,
        reps: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_)
            | Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Ties { .. }
            | Error::Io(_) => ErrorKind::Input,
            Error::SingularConstraint { .. }
            | Error::RankDeficient { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Domain(_)
            | Error::TooManyFailures { .. } => ErrorKind::Numerical,
            Error::NotConverged { .. } => ErrorKind::Convergence,
        }
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

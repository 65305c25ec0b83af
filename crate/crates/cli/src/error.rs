use serde::Serialize;

use constrest::{Error, ErrorKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => ErrorKind::Input,
            CliError::Core(e) => e.kind(),
            CliError::NotConverged { .. } => ErrorKind::Convergence,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Convergence => 4,
        }
    }

    /// The single-line JSON object written to standard error.
    pub fn to_json(&self) -> String {
        let (row, column) = match self {
            CliError::Core(Error::Parse { row, column, .. }) => (Some(*row), Some(*column)),
            CliError::Core(Error::Ties { column }) => (None, Some(*column)),
            _ => (None, None),
        };
        let kind = match self.kind() {
            ErrorKind::Input => "input",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Convergence => "convergence",
        };
        let obj = ErrorObject {
            error: kind,
            exit_code: self.exit_code(),
            message: self.to_string().replace('\n', " "),
            row,
            column,
        };
        serde_json::to_string(&obj).expect("error object serializes")
    }
}

#[derive(Serialize)]
struct ErrorObject {
    error: &'static str,
    exit_code: i32,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_kinds() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(Error::NotPositiveDefinite("I".into())).exit_code(), 3);
        let e = CliError::NotConverged { iterations: 100, residual: 1e-3 };
        assert_eq!(e.exit_code(), 4);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "convergence");
        assert_eq!(v["exit_code"], 4);
    }
}

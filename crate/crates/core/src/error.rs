use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("admittance requested for an empty island")]
    EmptyIsland,

    #[error("dispatch infeasible: {0}")]
    Infeasible(String),

    #[error("snapshot database is empty")]
    EmptyDatabase,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("training data has a single class ({0}); skip this contingency")]
    SingleClass(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("power flow did not converge: {0}")]
    NoConvergence(String),

    #[error("malformed data: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

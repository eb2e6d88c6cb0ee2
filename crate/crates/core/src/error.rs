//! Error type shared by every module of the simulator.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, layouts or lengths that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// Caller supplied values that are not admissible (NaN, negative weights, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("lookup error: unknown segment `{0}`")]
    UnknownSegment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A CSV cell that could not be parsed. `row` counts data rows from 1.
    #[error("ingestion error at row {row}, column `{column}`: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("ingestion error: {0}")]
    NoSamples(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but violates its schema. `location` names the offending
    /// element, e.g. `layers[1]` or `edges[42]`.
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("dimension mismatch at {location}: expected {expected}, got {actual}")]
    Dimension {
        location: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid node id {id} (graph has {len} nodes)")]
    InvalidNode { id: usize, len: usize },

    #[error("edge ({i}, {j}): {source}")]
    Edge {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dimension(location: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            location: location.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. } | Error::Unsupported(_) => 3,
            Error::Edge { source, .. } => source.exit_code(),
            Error::Config(_) | Error::InvalidNode { .. } => 64,
            Error::Schema { .. } => 2,
            Error::Io { .. } => 1,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("instance {id} does not conform to schema: {reason}")]
    SchemaMismatch { id: u64, reason: String },

    #[error("invalid ground truth for instance {id}: {reason}")]
    InvalidTruth { id: u64, reason: String },

    #[error("instance id mismatch: expected {expected}, got {actual}")]
    IdMismatch { expected: u64, actual: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty portfolio")]
    EmptyPortfolio,

    #[error("no ground truth for instance {0}")]
    MissingTruth(u64),

    #[error("no weight update has been performed yet")]
    NoUpdates,

    #[error("wrong function kind: expected {expected}, got {actual}")]
    WrongKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("attribute `{0}` cannot be flipped: {1}")]
    NotFlippable(String, String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("infeasible constraint set: subset {subset:?} still violated by {violation:.3e}")]
    Infeasible { subset: Vec<String>, violation: f64 },

    #[error("replay diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::SchemaMismatch { .. }
                | Error::InvalidTruth { .. }
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::NotFlippable(..)
                | Error::WrongKind { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),

    #[error("unknown operation `{0}`")]
    UnknownOperation(String),

    #[error("component `{0}` is not recovering")]
    NotRecovering(String),

    #[error("invalid transition row for state `{state}`: {reason}")]
    InvalidRow { state: String, reason: String },

    #[error("invalid workload: {0}")]
    Workload(String),

    #[error("model failed validation:\n{}", render_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input documents, as opposed to failures
    /// while producing output.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Csv(_) | Error::Json(_) => false,
            _ => true,
        }
    }
}

fn render_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

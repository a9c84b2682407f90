use thiserror::Error;

/// Toolkit-wide error type.
///
/// Each variant maps to a stable category string that the CLI prints on
/// stderr (`error[<category>]: <message>`) so callers can dispatch on it.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document (bad JSON, missing fields, empty file).
    #[error("{0}")]
    Parse(String),

    /// A conversation violates a model invariant (span/text mismatch,
    /// out-of-bounds offsets, non-contiguous turn indices).
    #[error("conversation {conversation_id}, turn {turn_index}: {message}")]
    Integrity {
        conversation_id: String,
        turn_index: usize,
        message: String,
    },

    /// Invalid or missing configuration (bad fraction, missing seed,
    /// marker patterns without an index placeholder, ...).
    #[error("{0}")]
    Config(String),

    /// A required cross-file key is missing (rewrites, predictions).
    #[error("{0}")]
    Lookup(String),

    /// Structurally invalid marked-up text (unbalanced markers).
    #[error("{0}")]
    Structure(String),

    /// Invalid metric input (empty score list, non-positive baseline).
    #[error("{0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-parseable category for CLI error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Integrity { .. } => "integrity",
            Error::Config(_) => "config",
            Error::Lookup(_) => "lookup",
            Error::Structure(_) => "structure",
            Error::Metric(_) => "metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

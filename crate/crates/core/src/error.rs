use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Zero-norm vectors and similar inputs that have no meaningful result.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value out of range: {0}")]
    Range(String),

    /// A malformed `.mlt` tensor file. `field` names the offending part of the header or payload.
    #[error("tensor format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("average precision undefined for class {class}: no positive labels")]
    UndefinedAp { class: usize },

    #[error("mean average precision undefined: no class has a positive label")]
    NoValidClass,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (first image index {first_image})")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        first_image: usize,
    },

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

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            field,
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 for configuration problems, 3 for numerical aborts, 2 for everything
    /// data- or shape-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NumericalAbort { .. } => 3,
            _ => 2,
        }
    }
}

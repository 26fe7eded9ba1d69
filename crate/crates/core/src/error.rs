//! Crate-wide error type.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad header: expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: field `{field}`: {reason}")]
    MalformedRow {
        path: String,
        line: u64,
        field: &'static str,
        reason: String,
    },

    #[error("{path}:{line}: unknown {dimension} label `{label}`")]
    UnknownLabel {
        path: String,
        line: u64,
        dimension: &'static str,
        label: String,
    },

    #[error("{path}:{line}: duplicate cell key `{key}`")]
    DuplicateCell {
        path: String,
        line: u64,
        key: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("cell tables have no overlapping defined cells")]
    NoOverlap,

    #[error(
        "complete separation detected while fitting the binary model; \
         a covariate level perfectly predicts the outcome — inspect the \
         dummy threshold and the input data"
    )]
    Separation,

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable tag for this error, used in CLI error blocks.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::HeaderMismatch { .. } => "header_mismatch",
            Error::MalformedRow { .. } => "malformed_row",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::DuplicateCell { .. } => "duplicate_cell",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::NoOverlap => "no_overlap",
            Error::Separation => "separation",
            Error::Internal(_) => "internal",
        }
    }

    /// True for errors caused by inputs (files, labels, contracts) rather
    /// than by the tool itself. Drives the CLI exit-code split.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}

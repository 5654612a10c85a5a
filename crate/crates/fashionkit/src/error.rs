//! Error type shared across the toolkit.
//!
//! Variants are grouped by failure class rather than by module so that the
//! command-line layer can map them onto exit codes without inspecting
//! message strings.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem failure, tagged with the path that was being touched.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON document that does not parse, with a 1-based position.
    #[error("{file}:{line}:{column}: {message}")]
    Json {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// Structural problem in a config tree (bad root, empty key, bad value).
    #[error("config: {0}")]
    Config(String),

    /// Dotted-path lookup that found nothing.
    #[error("no value at path \"{path}\"")]
    MissingPath { path: String },

    /// Dotted-path lookup that found a value of the wrong kind.
    #[error("expected {expected} at \"{path}\", found {found}")]
    WrongType {
        path: String,
        expected: &'static str,
        found: &'static str,
    },

    /// Override merge attempted to replace a mapping with a non-mapping
    /// or vice versa.
    #[error("cannot merge {found} into {existing} at \"{path}\"")]
    MergeConflict {
        path: String,
        existing: &'static str,
        found: &'static str,
    },

    /// Second registration under a name that is already taken.
    #[error("registry \"{registry}\": \"{key}\" is already registered")]
    DuplicateEntry { registry: String, key: String },

    /// Config asked for a component type nobody registered.
    #[error("registry \"{registry}\": unknown type \"{key}\" (known: {known})")]
    UnknownType {
        registry: String,
        key: String,
        known: String,
    },

    /// Malformed line in a whitespace-separated annotation file.
    #[error("{file}:{line}: {message}")]
    ParseLine {
        file: String,
        line: usize,
        message: String,
    },

    /// Well-formed input that violates a dataset-level rule.
    #[error("invalid data: {0}")]
    Validation(String),

    /// Tensor or layer shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: u64 },

    /// Corrupt or incompatible checkpoint file.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Checkpoint was produced under a different resolved config.
    #[error("config fingerprint mismatch: checkpoint has {found}, active config is {expected}")]
    FingerprintMismatch { expected: String, found: String },

    /// Metric computation was handed inconsistent inputs.
    #[error("metric: {0}")]
    Metric(String),

    /// Model-zoo manifest or fetch failure other than hash mismatch.
    #[error("zoo: {0}")]
    Zoo(String),

    /// Downloaded artifact does not hash to the manifest value.
    #[error("zoo: \"{model_id}\": sha256 mismatch (expected {expected}, got {actual})")]
    ChecksumMismatch {
        model_id: String,
        expected: String,
        actual: String,
    },

    /// HTTP transfer failure.
    #[error("http: {url}: {message}")]
    Http { url: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the contents of user-supplied data files
    /// (as opposed to bad configuration or runtime failures).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::ParseLine { .. }
                | Error::Validation(_)
                | Error::Checkpoint(_)
                | Error::FingerprintMismatch { .. }
                | Error::Metric(_)
        )
    }
}

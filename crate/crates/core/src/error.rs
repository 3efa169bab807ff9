use thiserror::Error;

/// Errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: mismatched dimensions, missing regime fields,
    /// out-of-range hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input: out-of-domain values, empty collections.
    #[error("domain error: {0}")]
    Domain(String),

    /// A data file could not be ingested. Always names the offending file.
    #[error("ingestion error in {path}: {message}")]
    Ingestion { path: String, message: String },

    /// A model file is malformed or has an unsupported version.
    #[error("model file error: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

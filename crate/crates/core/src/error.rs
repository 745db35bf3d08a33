use std::io;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-supplied configuration (geometry, layout, file contents...).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A file did not match its declared binary format.
    #[error("format error: {0}")]
    Format(String),
    /// A non-finite value appeared during a numerical stage.
    #[error("numerical failure in stage `{stage}`: {detail}")]
    Numerical { stage: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numerical(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical {
            stage,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate world extent: {0}")]
    DegenerateExtent(String),
    #[error("bins do not partition [1, inf): {0}")]
    InvalidBins(String),
    #[error("beam grids are not nested: {source_beams} -> {target_beams} beams")]
    NonNestedGrids {
        source_beams: u32,
        target_beams: u32,
    },
    #[error("vector {index} is not unit norm (norm = {norm})")]
    NotNormalized { index: usize, norm: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty confusion matrix")]
    EmptyConfusion,
    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

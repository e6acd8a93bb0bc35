//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input was structurally valid but degenerate (e.g. a single-valued
    /// histogram, or two score sets with zero pooled variance).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Tissue segmentation produced an empty foreground mask.
    #[error("no tissue found: {0}")]
    NoTissueFound(String),

    /// A merge trace referenced a region id absent from the label map.
    #[error("corrupt merge trace: {0}")]
    CorruptTrace(String),

    /// A metric had no comparable pairs or classes to evaluate.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    TrainDiverged(String),

    /// A file had an unexpected layout or failed validation.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Configuration file rejected.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

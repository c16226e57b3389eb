use std::path::PathBuf;

use crate::fitting::FitReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Statistical model construction failed (too few samples, zero variance, ...).
    #[error("model construction failed: {0}")]
    ModelConstruction(String),

    /// A geometric quantity collapsed (coincident points, empty bounding box).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("vertex colour sampling failed: {0}")]
    Sampling(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    /// The optimiser produced a non-finite value. The report holds the best state seen.
    #[error("optimisation diverged after {} iterations", .0.iterations)]
    Diverged(Box<FitReport>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn arg(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

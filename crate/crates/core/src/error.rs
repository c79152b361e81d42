use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("value {value} at index {index} outside declared range [{min}, {max}]")]
    OutOfRange {
        index: usize,
        value: f32,
        min: f32,
        max: f32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("backend transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("model rejected request: {0}")]
    Rejected(String),

    #[error("model produced invalid scores: {0}")]
    InvalidScores(String),

    #[error("image {image_id}: frame-0 target score {score} cannot normalize a curve")]
    UnusableFrame0 { image_id: String, score: f64 },

    #[error("statistics: {0}")]
    Statistics(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors raised by the classifier backend rather than by the data.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. } | Error::Rejected(_) | Error::InvalidScores(_)
        )
    }

    /// True for errors caused by invalid configuration or parameters.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidParameter(_))
    }
}

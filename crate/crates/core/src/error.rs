use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty initialization")]
    EmptyInitialization,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for {len} gaussians")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate camera span")]
    DegenerateCameraSpan,

    #[error("rank-deficient system: rank {rank} < {required} unknowns")]
    RankDeficient { rank: usize, required: usize },

    #[error("empty neighbor graph")]
    EmptyGraph,

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("dataset too short: {len} frames, need more than {required}")]
    DatasetTooShort { len: usize, required: usize },

    #[error("not a motion field file")]
    NotMotionField,

    #[error("unsupported motion field version {0}")]
    UnsupportedVersion(u32),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

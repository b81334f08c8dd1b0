use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A decoded extent exceeded [`crate::anchors::MAX_DECODED_EXTENT`].
    #[error("decoded extent {extent} exceeds the overflow limit")]
    DecodeOverflow { extent: f64 },

    /// Regression residual is zero while the boxes do not fully overlap,
    /// so the gradient direction cannot be normalized.
    #[error("degenerate regression pair: zero smooth-L1 with IoU {iou}")]
    DegeneratePair { iou: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed feature map: {0}")]
    Format(String),

    /// An error raised while reading or writing a specific file.
    #[error("{}: {error}", path.display())]
    File {
        path: std::path::PathBuf,
        error: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_box(msg: impl Into<String>) -> Self {
        Error::InvalidBox(msg.into())
    }

    pub(crate) fn in_file(self, path: impl Into<std::path::PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            error: Box::new(self),
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

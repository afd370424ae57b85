use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class index {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("missing answer for query {0}")]
    MissingAnswer(usize),
    #[error("batch is not antithetic-paired")]
    UnpairedBatch,
    #[error("missing answer at the query of interest")]
    MissingQoiAnswer,
    #[error("matrix not positive definite after {attempts} regularization attempts")]
    NotPositiveDefinite { attempts: usize },
    #[error("zero descent direction")]
    ZeroDirection,
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("stream file: {0}")]
    StreamFormat(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

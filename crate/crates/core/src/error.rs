use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("missing file {0}")]
    MissingFile(std::path::PathBuf),
    #[error("unusable sample: {0}")]
    UnusableSample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("raster error in {path}: {message}")]
    Raster { path: PathBuf, message: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite values at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidImage(_) => "invalid_image",
            Error::Raster { .. } => "raster",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
        }
    }
}

impl From<braingan_autograd::ArchiveError> for Error {
    fn from(e: braingan_autograd::ArchiveError) -> Self {
        Error::Checkpoint(e.to_string())
    }
}

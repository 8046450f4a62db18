use std::path::PathBuf;

/// Library-wide error type. Variants map onto the process exit codes used by
/// the command-line front end: `Config` exits 2, `Io` exits 3, and the
/// remaining variants exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or input lies outside the domain of the requested quantity.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration file or run setup is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric routine failed to reach its accuracy target or overflowed.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Too few samples to form the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A statistical invariant check failed at run time.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary trace file is malformed or has an unsupported layout.
    #[error("malformed trace file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::fmt;

/// Coarse error category, printed as the first token of CLI error lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Format,
    Shape,
    Numeric,
    Config,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Format => "format",
            Category::Shape => "shape",
            Category::Numeric => "numeric",
            Category::Config => "config",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    Numeric(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("invalid segment list: {0}")]
    Segments(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Shape(_) | Error::Segments(_) => Category::Shape,
            Error::Numeric(_) | Error::UndefinedMetric(_) => Category::Numeric,
            Error::Config(_) => Category::Config,
            Error::Format(_) | Error::Io { .. } => Category::Format,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

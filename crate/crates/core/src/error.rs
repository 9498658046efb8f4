use std::path::PathBuf;

/// Errors produced anywhere in the tile-embedding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("legend error: {0}")]
    Legend(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("weighting error: {0}")]
    Weighting(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("truncated input at byte offset {offset}: {what}")]
    Truncated { offset: usize, what: String },

    #[error("unsupported {container} version {found} (expected {expected})")]
    Version {
        container: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
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

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure came from bad numbers (NaN, divergence) rather than
    /// bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }

    /// Whether the failure is a configuration problem.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

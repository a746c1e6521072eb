use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error on parameter `{param}`: {message}")]
    Training { param: String, message: String },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// Normalization parameters that were not fitted on training data.
    #[error("leakage guard: {0}")]
    Leakage(String),

    #[error("unknown target `{0}` (expected june, july, august, september or jjas)")]
    UnknownTarget(String),

    #[error("missing normalization parameters: {0}")]
    MissingNormParams(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Domain(_) => "domain",
            Error::Format { .. } => "format",
            Error::Usage(_) => "usage",
            Error::Training { .. } => "training",
            Error::Oracle(_) => "oracle",
            Error::Protocol(_) => "protocol",
            Error::Leakage(_) => "leakage",
            Error::UnknownTarget(_) => "unknown_target",
            Error::MissingNormParams(_) => "missing_norm_params",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Process exit code for the CLI. Every kind maps to a distinct code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::UnknownTarget(_) => 4,
            Error::MissingNormParams(_) => 5,
            Error::Protocol(_) => 6,
            Error::Leakage(_) => 7,
            Error::Shape(_) => 8,
            Error::Data(_) => 9,
            Error::Domain(_) => 10,
            Error::Format { .. } => 11,
            Error::Training { .. } => 12,
            Error::Oracle(_) => 13,
            Error::Io { .. } => 14,
            Error::Json(_) => 15,
            Error::Csv(_) => 16,
        }
    }
}

use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("lifecycle error: {0}")]
    Lifecycle(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
    #[error("format error at line {line}: {msg}")]
    Format { line: u64, msg: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("incompatible version: found {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("encoding error: symbol {symbol:?} at position {position} is not in the charset")]
    Encoding { symbol: char, position: usize },

    #[error("capacity error: requested {requested} distinct labels but only {available} exist")]
    Capacity { requested: u128, available: u128 },

    #[error("rendering error: {0}")]
    Rendering(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file for sample {id}: {}", path.display())]
    MissingFile { id: String, path: PathBuf },

    #[error("malformed manifest {}: {reason}", path.display())]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("checksum mismatch for sample {id}: expected {expected:08x}, found {found:08x}")]
    ChecksumMismatch { id: String, expected: u32, found: u32 },

    #[error("bad magic: expected \"CAPN\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated model file: {0}")]
    Truncated(String),

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 validation/config, 2 I/O, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile { .. }
            | Error::MalformedManifest { .. }
            | Error::ChecksumMismatch { .. }
            | Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Corrupt(_)
            | Error::Io { .. } => 2,
            Error::Verification(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

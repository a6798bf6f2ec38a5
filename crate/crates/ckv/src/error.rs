use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ckv_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: checksum mismatch at byte offset {offset}")]
    Checksum { path: PathBuf, offset: u64 },
    #[error("{0}: checksum mismatch")]
    CorruptFile(PathBuf),
    #[error("store at {0} exists with a different manifest")]
    ConflictingStore(PathBuf),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("read of chunk {chunk} in layer {layer} failed: {source}")]
    ChunkRead { layer: u32, chunk: u32, source: io::Error },
    #[error("missing store for layout {0}")]
    MissingStore(String),
    #[error("real-io counters diverge from simulation: {0}")]
    CounterMismatch(String),
    #[error("{0}")]
    Usage(String),
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}

impl<T> IoContext<T> for std::result::Result<T, serde_json::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Json { path: path.into(), source })
    }
}

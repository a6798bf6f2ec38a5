use thiserror::Error;

use crate::model::ChunkKey;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid geometry: prefix_len={prefix_len}, chunk_size={chunk_size}")]
    InvalidGeometry { prefix_len: u32, chunk_size: u32 },
    #[error("chunk index {index} out of range (num_chunks={num_chunks})")]
    ChunkOutOfRange { index: u32, num_chunks: u32 },
    #[error("token index {token} out of range (prefix_len={prefix_len})")]
    TokenOutOfRange { token: u32, prefix_len: u32 },
    #[error("layer {layer} out of range (num_layers={num_layers})")]
    LayerOutOfRange { layer: u32, num_layers: u32 },
    #[error("budget ratio {0} outside (0, 1]")]
    InvalidBudget(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("non-finite or negative value at index {0}")]
    NonFinite(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("read amplification undefined: no tokens needed")]
    NothingNeeded,
    #[error("entry of {size} bytes exceeds tier capacity {capacity}")]
    TooLarge { size: u64, capacity: u64 },
    #[error("unknown policy kind `{0}`")]
    UnknownPolicy(alloc::string::String),
    #[error("unknown pipeline kind `{0}`")]
    UnknownPipeline(alloc::string::String),
    #[error("chunk {0:?} missing from residency")]
    MissingChunk(ChunkKey),
    #[error("trace exhausted: request {0} not present")]
    TraceExhausted(usize),
    #[error("malformed event log: {0}")]
    MalformedLog(&'static str),
}

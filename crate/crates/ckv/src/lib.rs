//! Storage, file formats, reporting and real-I/O replay on top of `ckv-core`.

pub mod checksum;
pub mod cli;
pub mod config;
pub mod error;
pub mod realio;
pub mod report;
pub mod shared_cache;
pub mod store;
pub mod trace_file;

pub use ckv_core as core;
pub use error::{Error, Result};

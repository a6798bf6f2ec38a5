//! Core of the ContiguousKV offloading engine: chunk geometry, importance
//! scoring, synthetic attention traces, tiered cache policies, prefetch
//! planning and the deterministic Re-Prefill simulator.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, real I/O and
//! the command line live in the `ckv` crate.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cache;
pub mod device;
pub mod error;
pub mod heap;
pub mod importance;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};

//! Trace files: a JSON header next to a binary score blob.
//!
//! The blob holds little-endian `f32` scores laid out `[request][layer][token]`
//! followed by an 8-byte little-endian digest of the score bytes. The header
//! carries the manifest and one digest per `(request, layer)` row so a
//! corrupted byte can be located.

use std::fs;
use std::path::{Path, PathBuf};

use ckv_core::importance::TokenScores;
use ckv_core::workload::{AttentionTrace, RequestTrace, TraceManifest, TRACE_FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::checksum::{digest64, to_hex};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub manifest: TraceManifest,
    /// Blob file name, relative to the header.
    pub blob: String,
    pub blob_len: u64,
    pub checksum: String,
    pub row_checksums: Vec<String>,
}

/// `trace.json` -> `trace.scores`.
pub fn blob_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("scores")
}

fn encode(trace: &AttentionTrace) -> (Vec<u8>, Vec<String>) {
    let n = trace.manifest.geometry.prefix_len() as usize;
    let rows: usize = trace.requests.iter().map(|r| r.layers.len()).sum();
    let mut blob = Vec::with_capacity(rows * n * 4 + 8);
    let mut sums = Vec::with_capacity(rows);
    for req in &trace.requests {
        for layer in &req.layers {
            let start = blob.len();
            for s in &layer.scores {
                blob.extend_from_slice(&s.to_le_bytes());
            }
            sums.push(to_hex(digest64(&blob[start..])));
        }
    }
    (blob, sums)
}

pub fn write_trace(trace: &AttentionTrace, path: &Path) -> Result<()> {
    trace.manifest.validate()?;
    let (mut blob, row_checksums) = encode(trace);
    let sum = digest64(&blob);
    blob.extend_from_slice(&sum.to_le_bytes());
    let bpath = blob_path(path);
    let header = TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        manifest: trace.manifest.clone(),
        blob: bpath.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_owned(),
        blob_len: blob.len() as u64,
        checksum: to_hex(sum),
        row_checksums,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(&bpath, &blob).at(&bpath)?;
    let mut text = serde_json::to_string_pretty(&header).at(path)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_header(path: &Path) -> Result<TraceHeader> {
    let text = fs::read_to_string(path).at(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).at(path)?;
    let found = v.get("format_version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    if found != TRACE_FORMAT_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found, expected: TRACE_FORMAT_VERSION });
    }
    let header: TraceHeader = serde_json::from_value(v).at(path)?;
    if header.manifest.format_version != TRACE_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: header.manifest.format_version,
            expected: TRACE_FORMAT_VERSION,
        });
    }
    header.manifest.validate()?;
    Ok(header)
}

pub fn read_trace(path: &Path) -> Result<AttentionTrace> {
    let header = read_header(path)?;
    let m = &header.manifest;
    let bpath = path.parent().unwrap_or(Path::new("")).join(&header.blob);
    let blob = fs::read(&bpath).at(&bpath)?;
    let n = m.geometry.prefix_len() as usize;
    let layers = m.model.num_layers as usize;
    let row_bytes = n * 4;
    let rows = m.requests.len() * layers;
    let expected = (rows * row_bytes + 8) as u64;
    if (blob.len() as u64) < expected {
        return Err(Error::Truncated { path: bpath, expected, actual: blob.len() as u64 });
    }
    if blob.len() as u64 != expected || header.row_checksums.len() != rows {
        return Err(Error::LayoutMismatch(format!("{}: blob shape disagrees with its header", bpath.display())));
    }
    let (scores, tail) = blob.split_at(rows * row_bytes);
    let stored = u64::from_le_bytes(tail.try_into().expect("8-byte trailer"));
    if digest64(scores) != stored || to_hex(stored) != header.checksum {
        let bad_row = (0..rows).find(|&r| to_hex(digest64(&scores[r * row_bytes..(r + 1) * row_bytes])) != header.row_checksums[r]);
        let offset = bad_row.map_or(scores.len() as u64, |r| (r * row_bytes) as u64);
        return Err(Error::Checksum { path: bpath, offset });
    }
    let mut requests = Vec::with_capacity(m.requests.len());
    for (ri, spec) in m.requests.iter().enumerate() {
        let mut per_layer = Vec::with_capacity(layers);
        for l in 0..layers {
            let row = &scores[(ri * layers + l) * row_bytes..][..row_bytes];
            let vals = row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            per_layer.push(TokenScores::new(l as u32, vals)?);
        }
        requests.push(RequestTrace { prefix: spec.prefix, suffix_tokens: spec.suffix_tokens, layers: per_layer });
    }
    Ok(AttentionTrace { manifest: header.manifest, requests })
}

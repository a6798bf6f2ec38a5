//! Per-prefix KV files at chunk (or coarse block) granularity.
//!
//! A store directory holds `manifest.json` plus one keys file and one values
//! file per layer. Files are raw little-endian token-major bytes; unit `j`
//! starts at `j * unit_tokens * bytes_per_token` and the tail unit is padded
//! with zeros to full size.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use ckv_core::io::{coalesce_runs, units_for_tokens, IoStats};
use ckv_core::model::{ChunkGeometry, ModelConfig, PrefixId};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checksum::{file_digest64, padded_digest64, to_hex};
use crate::error::{Error, IoContext, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    ContiguousChunk,
    CoarseBlock,
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::ContiguousChunk => "contiguous_chunk",
            LayoutKind::CoarseBlock => "coarse_block",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFiles {
    pub keys: String,
    pub values: String,
    pub keys_checksum: String,
    pub values_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub prefix: PrefixId,
    pub model: ModelConfig,
    /// Geometry of the addressable read unit.
    pub geometry: ChunkGeometry,
    pub layout: LayoutKind,
    pub coarse_block_tokens: Option<u32>,
    /// Set once every layer has been written.
    pub populated: bool,
    pub layers: Vec<LayerFiles>,
}

impl StoreManifest {
    pub fn new(prefix: PrefixId, model: ModelConfig, prefix_len: u32, layout: LayoutKind, unit_tokens: u32) -> Result<Self> {
        model.validate()?;
        let geometry = ChunkGeometry::new(prefix_len, unit_tokens)?;
        let layers = (0..model.num_layers)
            .map(|l| LayerFiles {
                keys: format!("layer-{l:03}.keys"),
                values: format!("layer-{l:03}.values"),
                keys_checksum: String::new(),
                values_checksum: String::new(),
            })
            .collect();
        Ok(Self {
            format_version: STORE_FORMAT_VERSION,
            prefix,
            model,
            geometry,
            layout,
            coarse_block_tokens: (layout == LayoutKind::CoarseBlock).then_some(unit_tokens),
            populated: false,
            layers,
        })
    }

    pub fn unit_tokens(&self) -> u32 {
        self.geometry.chunk_size()
    }

    pub fn keys_file_len(&self) -> u64 {
        self.geometry.padded_len() * self.model.key_bytes_per_token()
    }

    pub fn values_file_len(&self) -> u64 {
        self.geometry.padded_len() * self.model.value_bytes_per_token()
    }

    /// Bytes on disk over all layers, excluding the manifest.
    pub fn total_bytes(&self) -> u64 {
        (self.keys_file_len() + self.values_file_len()) * u64::from(self.model.num_layers)
    }

    /// Equality ignoring checksums and the populated flag.
    pub fn same_shape(&self, other: &StoreManifest) -> bool {
        self.format_version == other.format_version
            && self.prefix == other.prefix
            && self.model == other.model
            && self.geometry == other.geometry
            && self.layout == other.layout
            && self.coarse_block_tokens == other.coarse_block_tokens
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.keys == b.keys && a.values == b.values)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.format_version != STORE_FORMAT_VERSION {
            return Err(Error::VersionMismatch { path: path.to_path_buf(), found: self.format_version, expected: STORE_FORMAT_VERSION });
        }
        self.model.validate()?;
        if self.layers.len() != self.model.num_layers as usize {
            return Err(Error::LayoutMismatch(format!("{} layer entries for {} layers", self.layers.len(), self.model.num_layers)));
        }
        let unit_ok = match self.layout {
            LayoutKind::ContiguousChunk => self.coarse_block_tokens.is_none(),
            LayoutKind::CoarseBlock => self.coarse_block_tokens == Some(self.unit_tokens()),
        };
        if !unit_ok {
            return Err(Error::LayoutMismatch("coarse_block_tokens disagrees with layout".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadKind {
    KeysOnly,
    KeysAndValues,
}

/// Bytes of one unit, padding removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPayload {
    pub index: u32,
    pub tokens: u32,
    pub keys: Vec<u8>,
    /// Empty for keys-only reads.
    pub values: Vec<u8>,
}

struct LayerHandle {
    keys: File,
    values: File,
}

/// An open store. Reads of a layer may run concurrently; a write to a layer
/// excludes reads of that layer.
pub struct StoreHandle {
    root: PathBuf,
    manifest: Mutex<StoreManifest>,
    layers: Vec<RwLock<LayerHandle>>,
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle").field("root", &self.root).finish_non_exhaustive()
    }
}

#[cfg(unix)]
fn read_at(f: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(f, buf, offset)
}

#[cfg(windows)]
fn read_at(f: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match f.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

#[cfg(unix)]
fn write_at(f: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::write_all_at(f, buf, offset)
}

#[cfg(windows)]
fn write_at(f: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = f.seek_write(buf, offset)?;
        buf = &buf[n..];
        offset += n as u64;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<StoreManifest> {
    let text = fs::read_to_string(path).at(path)?;
    let m: StoreManifest = serde_json::from_str(&text).at(path)?;
    m.validate(path)?;
    Ok(m)
}

fn write_manifest(root: &Path, m: &StoreManifest) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join("manifest.json.tmp");
    let mut text = serde_json::to_string_pretty(m).at(&path)?;
    text.push('\n');
    fs::write(&tmp, text).at(&tmp)?;
    fs::rename(&tmp, &path).at(&path)
}

/// Creates the directory skeleton with zero-filled files, or opens an
/// existing store whose manifest has the same shape.
pub fn create_store(root: &Path, manifest: StoreManifest) -> Result<StoreHandle> {
    manifest.validate(root)?;
    let mpath = root.join(MANIFEST_FILE);
    if mpath.exists() {
        let existing = read_manifest(&mpath)?;
        if !existing.same_shape(&manifest) {
            return Err(Error::ConflictingStore(root.to_path_buf()));
        }
        return open_store(root);
    }
    fs::create_dir_all(root).at(root)?;
    let mut manifest = manifest;
    manifest.populated = false;
    let (klen, vlen) = (manifest.keys_file_len(), manifest.values_file_len());
    for lf in &mut manifest.layers {
        for (name, len, sum) in [(&lf.keys, klen, &mut lf.keys_checksum), (&lf.values, vlen, &mut lf.values_checksum)] {
            let p = root.join(name);
            let f = File::create(&p).at(&p)?;
            f.set_len(len).at(&p)?;
            *sum = to_hex(padded_digest64(&[], len));
        }
    }
    write_manifest(root, &manifest)?;
    open_unverified(root, manifest)
}

/// Opens a store and verifies every file against its recorded checksum.
pub fn open_store(root: &Path) -> Result<StoreHandle> {
    let manifest = read_manifest(&root.join(MANIFEST_FILE))?;
    for lf in &manifest.layers {
        for (name, sum, len) in
            [(&lf.keys, &lf.keys_checksum, manifest.keys_file_len()), (&lf.values, &lf.values_checksum, manifest.values_file_len())]
        {
            let p = root.join(name);
            let actual = fs::metadata(&p).at(&p)?.len();
            if actual != len {
                return Err(Error::Truncated { path: p, expected: len, actual });
            }
            if to_hex(file_digest64(&p)?) != *sum {
                return Err(Error::CorruptFile(p));
            }
        }
    }
    open_unverified(root, manifest)
}

fn open_unverified(root: &Path, manifest: StoreManifest) -> Result<StoreHandle> {
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lf in &manifest.layers {
        let open = |name: &str| -> Result<File> {
            let p = root.join(name);
            OpenOptions::new().read(true).write(true).open(&p).at(&p)
        };
        layers.push(RwLock::new(LayerHandle { keys: open(&lf.keys)?, values: open(&lf.values)? }));
    }
    Ok(StoreHandle { root: root.to_path_buf(), manifest: Mutex::new(manifest), layers })
}

impl StoreHandle {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> StoreManifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn shape(&self) -> (ModelConfig, ChunkGeometry, LayoutKind) {
        let m = self.manifest.lock().expect("manifest lock");
        (m.model, m.geometry, m.layout)
    }

    fn layer(&self, layer: u32) -> Result<&RwLock<LayerHandle>> {
        self.layers.get(layer as usize).ok_or(ckv_core::Error::LayerOutOfRange { layer, num_layers: self.layers.len() as u32 }.into())
    }

    /// Writes one layer's token-major keys and values and refreshes the
    /// layer's checksums.
    pub fn write_prefix_kv(&self, layer: u32, keys: &[u8], values: &[u8]) -> Result<()> {
        let (model, geometry, _) = self.shape();
        let n = u64::from(geometry.prefix_len());
        for (got, bpt) in [(keys.len(), model.key_bytes_per_token()), (values.len(), model.value_bytes_per_token())] {
            if got as u64 != n * bpt {
                return Err(ckv_core::Error::LengthMismatch { expected: (n * bpt) as usize, actual: got }.into());
            }
        }
        let lock = self.layer(layer)?;
        let guard = lock.write().expect("layer lock");
        let names = {
            let m = self.manifest.lock().expect("manifest lock");
            m.layers[layer as usize].clone()
        };
        let kp = self.root.join(&names.keys);
        let vp = self.root.join(&names.values);
        write_at(&guard.keys, keys, 0).at(&kp)?;
        write_at(&guard.values, values, 0).at(&vp)?;
        guard.keys.sync_data().at(&kp)?;
        guard.values.sync_data().at(&vp)?;
        let mut m = self.manifest.lock().expect("manifest lock");
        let (ks, vs) = (to_hex(padded_digest64(keys, m.keys_file_len())), to_hex(padded_digest64(values, m.values_file_len())));
        m.layers[layer as usize].keys_checksum = ks;
        m.layers[layer as usize].values_checksum = vs;
        write_manifest(&self.root, &m)
    }

    pub fn mark_populated(&self) -> Result<()> {
        let mut m = self.manifest.lock().expect("manifest lock");
        m.populated = true;
        write_manifest(&self.root, &m)
    }

    /// Reads whole units, coalescing adjacent indices into one sequential
    /// read per run.
    pub fn read_chunks(&self, layer: u32, indices: &[u32], kind: ReadKind) -> Result<(Vec<UnitPayload>, IoStats)> {
        let (model, geometry, _) = self.shape();
        let mut stats = ckv_core::io::unit_read_stats(&geometry, indices, model.bytes_per_token())?;
        let kbpt = model.key_bytes_per_token();
        let vbpt = model.value_bytes_per_token();
        let stride = u64::from(geometry.chunk_size());
        let guard = self.layer(layer)?.read().expect("layer lock");
        let mut out = Vec::with_capacity(indices.len());
        for run in coalesce_runs(indices) {
            let first = geometry.token_range(run.start)?.start;
            let last = geometry.token_range(run.end - 1)?.end;
            let tokens = u64::from(last - first);
            let offset = u64::from(run.start) * stride;
            let mut kbuf = vec![0u8; (tokens * kbpt) as usize];
            read_at(&guard.keys, &mut kbuf, offset * kbpt).map_err(|source| Error::ChunkRead { layer, chunk: run.start, source })?;
            let mut vbuf = Vec::new();
            if kind == ReadKind::KeysAndValues {
                vbuf = vec![0u8; (tokens * vbpt) as usize];
                read_at(&guard.values, &mut vbuf, offset * vbpt).map_err(|source| Error::ChunkRead { layer, chunk: run.start, source })?;
            }
            let mut at = 0u64;
            for j in run {
                let len = u64::from(geometry.logical_len(j)?);
                let k = kbuf[(at * kbpt) as usize..((at + len) * kbpt) as usize].to_vec();
                let v = if vbuf.is_empty() { Vec::new() } else { vbuf[(at * vbpt) as usize..((at + len) * vbpt) as usize].to_vec() };
                out.push(UnitPayload { index: j, tokens: len as u32, keys: k, values: v });
                at += len;
            }
        }
        if kind == ReadKind::KeysOnly {
            stats.bytes_read = stats.tokens_read * kbpt;
        }
        Ok((out, stats))
    }

    /// Loads every block holding at least one needed token.
    pub fn read_coarse_blocks_for_tokens(
        &self,
        layer: u32,
        needed_tokens: &[u32],
        block_tokens: u32,
    ) -> Result<(Vec<UnitPayload>, IoStats)> {
        let (_, geometry, layout) = self.shape();
        if layout != LayoutKind::CoarseBlock || geometry.chunk_size() != block_tokens {
            return Err(Error::LayoutMismatch(format!(
                "{} store with {}-token units, asked for {block_tokens}-token blocks",
                layout.as_str(),
                geometry.chunk_size()
            )));
        }
        let blocks = units_for_tokens(&geometry, needed_tokens)?;
        let (payload, mut stats) = self.read_chunks(layer, &blocks, ReadKind::KeysAndValues)?;
        stats.tokens_needed = needed_tokens.len() as u64;
        Ok((payload, stats))
    }

    /// The first `len` bytes of a layer's key region.
    pub fn read_key_prefix(&self, layer: u32, len: u64) -> Result<Vec<u8>> {
        let (model, geometry, _) = self.shape();
        let max = u64::from(geometry.prefix_len()) * model.key_bytes_per_token();
        if len > max {
            return Err(ckv_core::Error::LengthMismatch { expected: max as usize, actual: len as usize }.into());
        }
        let guard = self.layer(layer)?.read().expect("layer lock");
        let mut buf = vec![0u8; len as usize];
        read_at(&guard.keys, &mut buf, 0).map_err(|source| Error::ChunkRead { layer, chunk: 0, source })?;
        Ok(buf)
    }
}

/// Deterministic stand-in KV bytes for one layer of one prefix.
pub fn synthetic_kv(seed: u64, prefix: PrefixId, layer: u32, model: &ModelConfig, n: u32) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((prefix.0 << 20) ^ u64::from(layer));
    let mut keys = vec![0u8; (u64::from(n) * model.key_bytes_per_token()) as usize];
    let mut values = vec![0u8; (u64::from(n) * model.value_bytes_per_token()) as usize];
    rng.fill_bytes(&mut keys);
    rng.fill_bytes(&mut values);
    (keys, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildOutcome {
    Created,
    Verified,
}

/// Creates and fills a store with [`synthetic_kv`] bytes. An existing,
/// populated store with the same shape is verified instead of rewritten.
pub fn build_synthetic_store(root: &Path, manifest: StoreManifest, seed: u64) -> Result<(StoreHandle, BuildOutcome)> {
    let handle = create_store(root, manifest)?;
    let m = handle.manifest();
    if m.populated {
        return Ok((handle, BuildOutcome::Verified));
    }
    for layer in 0..m.model.num_layers {
        let (k, v) = synthetic_kv(seed, m.prefix, layer, &m.model, m.geometry.prefix_len());
        handle.write_prefix_kv(layer, &k, &v)?;
    }
    handle.mark_populated()?;
    Ok((handle, BuildOutcome::Created))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(layers: u32) -> ModelConfig {
        ModelConfig { num_layers: layers, hidden_dim: 4, kv_heads: 1, head_dim: 4, bytes_per_element: 2, sizing: Default::default() }
    }

    fn store(dir: &Path, n: u32, c: u32, layers: u32, layout: LayoutKind) -> StoreHandle {
        let m = StoreManifest::new(PrefixId(0), tiny_model(layers), n, layout, c).unwrap();
        create_store(dir, m).unwrap()
    }

    #[test]
    fn file_sizes_follow_slots() {
        let d = tempfile::tempdir().unwrap();
        let s = store(d.path(), 64, 16, 1, LayoutKind::ContiguousChunk);
        let m = s.manifest();
        // 8 B/token: 4 key bytes, 4 value bytes.
        assert_eq!(m.keys_file_len(), 4 * 16 * 4);
        assert_eq!(fs::metadata(d.path().join("layer-000.keys")).unwrap().len(), 256);
        let d2 = tempfile::tempdir().unwrap();
        let s2 = store(d2.path(), 100, 16, 1, LayoutKind::ContiguousChunk);
        assert_eq!(s2.manifest().geometry.num_chunks(), 7);
        assert_eq!(s2.manifest().keys_file_len(), 7 * 16 * 4);
    }

    #[test]
    fn reopen_is_idempotent_and_conflicts_fail() {
        let d = tempfile::tempdir().unwrap();
        let a = store(d.path(), 64, 16, 2, LayoutKind::ContiguousChunk).manifest();
        let b = store(d.path(), 64, 16, 2, LayoutKind::ContiguousChunk).manifest();
        assert_eq!(a, b);
        let other = StoreManifest::new(PrefixId(0), tiny_model(2), 80, LayoutKind::ContiguousChunk, 16).unwrap();
        assert!(matches!(create_store(d.path(), other), Err(Error::ConflictingStore(_))));
    }

    #[test]
    fn round_trip_with_padded_tail() {
        let d = tempfile::tempdir().unwrap();
        let s = store(d.path(), 100, 16, 2, LayoutKind::ContiguousChunk);
        let m = tiny_model(2);
        let (k0, v0) = synthetic_kv(7, PrefixId(0), 0, &m, 100);
        let (k1, v1) = synthetic_kv(7, PrefixId(0), 1, &m, 100);
        assert_ne!(k0, k1);
        s.write_prefix_kv(0, &k0, &v0).unwrap();
        s.write_prefix_kv(1, &k1, &v1).unwrap();
        let (p, st) = s.read_chunks(0, &[0, 6], ReadKind::KeysAndValues).unwrap();
        assert_eq!(p[0].keys, k0[..64]);
        assert_eq!(p[0].values, v0[..64]);
        assert_eq!(p[1].tokens, 4);
        assert_eq!(p[1].keys, k0[96 * 4..]);
        assert_eq!((st.tokens_read, st.read_ops, st.bytes_read), (20, 2, 160));
        let (p, _) = s.read_chunks(1, &[6], ReadKind::KeysOnly).unwrap();
        assert_eq!(p[0].keys, k1[96 * 4..]);
        assert!(p[0].values.is_empty());
        // Checksums were refreshed and verify on reopen.
        drop(s);
        assert!(open_store(d.path()).is_ok());
    }

    #[test]
    fn coalesced_reads() {
        let d = tempfile::tempdir().unwrap();
        let s = store(d.path(), 128, 16, 1, LayoutKind::ContiguousChunk);
        let (p, st) = s.read_chunks(0, &[3, 4, 5], ReadKind::KeysAndValues).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!((st.read_ops, st.distinct_units_read, st.tokens_read), (1, 3, 48));
        let (p, st) = s.read_chunks(0, &[], ReadKind::KeysAndValues).unwrap();
        assert!(p.is_empty());
        assert_eq!(st, IoStats::default());
        assert!(s.read_chunks(0, &[4, 3], ReadKind::KeysOnly).is_err());
        assert!(s.read_chunks(1, &[0], ReadKind::KeysOnly).is_err());
    }

    #[test]
    fn coarse_reads_amplify() {
        let d = tempfile::tempdir().unwrap();
        let s = store(d.path(), 1024, 64, 1, LayoutKind::CoarseBlock);
        let tokens = [3, 70, 71, 150, 200, 201, 300, 400, 500, 600, 700];
        let (p, st) = s.read_coarse_blocks_for_tokens(0, &tokens, 64).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(st.tokens_read, 576);
        assert_eq!(ckv_core::io::read_amplification(&st).unwrap().floor(), 52);
        assert!(s.read_coarse_blocks_for_tokens(0, &tokens, 16).is_err());
        let d2 = tempfile::tempdir().unwrap();
        let c = store(d2.path(), 1024, 64, 1, LayoutKind::ContiguousChunk);
        assert!(matches!(c.read_coarse_blocks_for_tokens(0, &tokens, 64), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn corruption_fails_open() {
        let d = tempfile::tempdir().unwrap();
        let s = store(d.path(), 64, 16, 1, LayoutKind::ContiguousChunk);
        let (k, v) = synthetic_kv(1, PrefixId(0), 0, &tiny_model(1), 64);
        s.write_prefix_kv(0, &k, &v).unwrap();
        drop(s);
        let p = d.path().join("layer-000.values");
        let mut bytes = fs::read(&p).unwrap();
        bytes[5] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(open_store(d.path()), Err(Error::CorruptFile(_))));
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(open_store(d.path()), Err(Error::Truncated { .. })));
    }

    #[test]
    fn build_is_idempotent() {
        let d = tempfile::tempdir().unwrap();
        let m = StoreManifest::new(PrefixId(3), tiny_model(2), 64, LayoutKind::ContiguousChunk, 16).unwrap();
        let (h, o) = build_synthetic_store(d.path(), m.clone(), 42).unwrap();
        assert_eq!(o, BuildOutcome::Created);
        let first = h.manifest();
        drop(h);
        let (h, o) = build_synthetic_store(d.path(), m, 42).unwrap();
        assert_eq!(o, BuildOutcome::Verified);
        assert_eq!(h.manifest(), first);
    }
}

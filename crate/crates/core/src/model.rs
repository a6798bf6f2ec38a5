//! Model sizing and chunk geometry.
//!
//! Everything here is plain value arithmetic. Chunk indices are 0-based: chunk
//! `j` covers tokens `[j*c, min((j+1)*c, n))`.

use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-token KV footprint is derived from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingMode {
    /// `hidden_dim * kv_heads * bytes_per_element`, the arithmetic behind the
    /// 28 KB-per-token figure for a 7B-class model.
    #[default]
    HiddenKvHeads,
    /// `2 * kv_heads * head_dim * bytes_per_element` (K and V for every kv head).
    PerHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: u32,
    pub hidden_dim: u32,
    pub kv_heads: u32,
    pub head_dim: u32,
    pub bytes_per_element: u32,
    #[serde(default)]
    pub sizing: SizingMode,
}

impl ModelConfig {
    /// Qwen2.5-7B-like shape: 28 layers, 3584 hidden, 4 kv heads, fp16.
    pub const fn qwen7b_like() -> Self {
        Self { num_layers: 28, hidden_dim: 3584, kv_heads: 4, head_dim: 128, bytes_per_element: 2, sizing: SizingMode::HiddenKvHeads }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.kv_heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1"));
        }
        if !matches!(self.bytes_per_element, 1 | 2 | 4) {
            return Err(Error::InvalidConfig("bytes_per_element must be 1, 2 or 4"));
        }
        Ok(())
    }

    /// Bytes of K plus V for one token in one layer.
    pub fn bytes_per_token(&self) -> u64 {
        let elem = u64::from(self.bytes_per_element);
        match self.sizing {
            SizingMode::HiddenKvHeads => u64::from(self.hidden_dim) * u64::from(self.kv_heads) * elem,
            SizingMode::PerHead => 2 * u64::from(self.kv_heads) * u64::from(self.head_dim) * elem,
        }
    }

    /// Key share of [`bytes_per_token`](Self::bytes_per_token). Odd totals give
    /// the extra byte to keys.
    pub fn key_bytes_per_token(&self) -> u64 {
        self.bytes_per_token().div_ceil(2)
    }

    pub fn value_bytes_per_token(&self) -> u64 {
        self.bytes_per_token() - self.key_bytes_per_token()
    }
}

/// Number of chunks of size `c` needed to cover `n` tokens.
pub fn chunk_count(n: u32, c: u32) -> Result<u32> {
    if n == 0 || c == 0 {
        return Err(Error::InvalidGeometry { prefix_len: n, chunk_size: c });
    }
    Ok(n.div_ceil(c))
}

/// Partition of a prefix of `prefix_len` tokens into fixed-size chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GeometryRepr", into = "GeometryRepr")]
pub struct ChunkGeometry {
    prefix_len: u32,
    chunk_size: u32,
    num_chunks: u32,
}

#[derive(Serialize, Deserialize)]
struct GeometryRepr {
    prefix_len: u32,
    chunk_size: u32,
    num_chunks: u32,
}

impl TryFrom<GeometryRepr> for ChunkGeometry {
    type Error = Error;

    fn try_from(r: GeometryRepr) -> Result<Self> {
        let g = ChunkGeometry::new(r.prefix_len, r.chunk_size)?;
        if g.num_chunks != r.num_chunks {
            return Err(Error::InvalidConfig("num_chunks does not match ceil(n / c)"));
        }
        Ok(g)
    }
}

impl From<ChunkGeometry> for GeometryRepr {
    fn from(g: ChunkGeometry) -> Self {
        Self { prefix_len: g.prefix_len, chunk_size: g.chunk_size, num_chunks: g.num_chunks }
    }
}

impl ChunkGeometry {
    pub fn new(prefix_len: u32, chunk_size: u32) -> Result<Self> {
        let num_chunks = chunk_count(prefix_len, chunk_size)?;
        Ok(Self { prefix_len, chunk_size, num_chunks })
    }

    pub fn prefix_len(&self) -> u32 {
        self.prefix_len
    }

    pub fn chunk_size(&self) -> u32 {
        self.chunk_size
    }

    pub fn num_chunks(&self) -> u32 {
        self.num_chunks
    }

    /// Token range `[start, end)` of chunk `j`.
    pub fn token_range(&self, j: u32) -> Result<Range<u32>> {
        if j >= self.num_chunks {
            return Err(Error::ChunkOutOfRange { index: j, num_chunks: self.num_chunks });
        }
        let start = j * self.chunk_size;
        let end = (start + self.chunk_size).min(self.prefix_len);
        Ok(start..end)
    }

    /// Logical (unpadded) token count of chunk `j`; only the last chunk can be short.
    pub fn logical_len(&self, j: u32) -> Result<u32> {
        self.token_range(j).map(|r| r.end - r.start)
    }

    /// Chunk containing token `t`.
    pub fn chunk_of_token(&self, t: u32) -> Result<u32> {
        if t >= self.prefix_len {
            return Err(Error::TokenOutOfRange { token: t, prefix_len: self.prefix_len });
        }
        Ok(t / self.chunk_size)
    }

    /// Token slots including padding of the last chunk.
    pub fn padded_len(&self) -> u64 {
        u64::from(self.num_chunks) * u64::from(self.chunk_size)
    }
}

/// Opaque identifier of a shared prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixId(pub u64);

impl fmt::Display for PrefixId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Identity of one chunk of one layer of one prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkKey {
    pub prefix: PrefixId,
    pub layer: u32,
    pub chunk: u32,
}

impl ChunkKey {
    pub const fn new(prefix: PrefixId, layer: u32, chunk: u32) -> Self {
        Self { prefix, layer, chunk }
    }
}

/// Fraction of the prefix kept as critical KV, and the layer grouping used to
/// share one critical set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub budget_ratio: f64,
    pub period_size: u32,
    pub subperiod_size: u32,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { budget_ratio: 0.25, period_size: 8, subperiod_size: 4 }
    }
}

impl BudgetConfig {
    pub fn validate(&self, num_layers: u32) -> Result<()> {
        if !(self.budget_ratio > 0.0 && self.budget_ratio <= 1.0) {
            return Err(Error::InvalidBudget(self.budget_ratio));
        }
        if self.subperiod_size == 0 || self.subperiod_size > self.period_size || self.period_size > num_layers {
            return Err(Error::InvalidConfig("require 1 <= subperiod <= period <= num_layers"));
        }
        Ok(())
    }
}

/// `k = max(1, round_half_up(r * m))`.
pub fn budget_count(budget_ratio: f64, m: u32) -> u32 {
    let k = libm::floor(budget_ratio * f64::from(m) + 0.5) as u32;
    k.clamp(1, m.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn qwen_sizing_matches_28kb() {
        let cfg = ModelConfig::qwen7b_like();
        assert_eq!(cfg.bytes_per_token(), 28_672);
        assert_eq!(64 * cfg.bytes_per_token(), 1_835_008);
        assert_eq!(cfg.key_bytes_per_token() + cfg.value_bytes_per_token(), 28_672);
    }

    #[test]
    fn unit_config_is_one_byte() {
        let cfg =
            ModelConfig { num_layers: 1, hidden_dim: 1, kv_heads: 1, head_dim: 1, bytes_per_element: 1, sizing: SizingMode::HiddenKvHeads };
        cfg.validate().unwrap();
        assert_eq!(cfg.bytes_per_token(), 1);
        assert_eq!(cfg.key_bytes_per_token(), 1);
        assert_eq!(cfg.value_bytes_per_token(), 0);
    }

    #[test]
    fn per_head_mode() {
        let cfg = ModelConfig { sizing: SizingMode::PerHead, ..ModelConfig::qwen7b_like() };
        assert_eq!(cfg.bytes_per_token(), 2 * 4 * 128 * 2);
    }

    #[test]
    fn rejects_bad_element_width() {
        let cfg = ModelConfig { bytes_per_element: 3, ..ModelConfig::qwen7b_like() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chunk_count_examples() {
        assert_eq!(chunk_count(100, 16).unwrap(), 7);
        assert_eq!(chunk_count(16, 16).unwrap(), 1);
        assert_eq!(chunk_count(6000, 16).unwrap(), 375);
        assert!(chunk_count(0, 16).is_err());
        assert!(chunk_count(16, 0).is_err());
    }

    #[test]
    fn token_ranges() {
        let g = ChunkGeometry::new(100, 16).unwrap();
        assert_eq!(g.token_range(0).unwrap(), 0..16);
        assert_eq!(g.token_range(6).unwrap(), 96..100);
        assert_eq!(g.logical_len(6).unwrap(), 4);
        assert!(g.token_range(7).is_err());
        let mut seen = [false; 100];
        for j in 0..7 {
            for t in g.token_range(j).unwrap() {
                assert!(!seen[t as usize]);
                seen[t as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn budget_count_rounding() {
        assert_eq!(budget_count(0.25, 8), 2);
        assert_eq!(budget_count(1.0, 7), 7);
        assert_eq!(budget_count(0.01, 4), 1);
        // half-up
        assert_eq!(budget_count(0.5, 5), 3);
    }

    #[test]
    fn budget_validation() {
        assert!(BudgetConfig::default().validate(28).is_ok());
        assert!(BudgetConfig { budget_ratio: 0.0, ..Default::default() }.validate(28).is_err());
        assert!(BudgetConfig { subperiod_size: 9, ..Default::default() }.validate(28).is_err());
        assert!(BudgetConfig::default().validate(4).is_err());
    }

    proptest! {
        #[test]
        fn ranges_partition_prefix(n in 1u32..5000, c in 1u32..300) {
            let g = ChunkGeometry::new(n, c).unwrap();
            let m = g.num_chunks();
            prop_assert!(u64::from(m) * u64::from(c) >= u64::from(n));
            prop_assert!(u64::from(m - 1) * u64::from(c) < u64::from(n));
            let mut next = 0;
            for j in 0..m {
                let r = g.token_range(j).unwrap();
                prop_assert_eq!(r.start, next);
                prop_assert!(r.end > r.start);
                if j + 1 < m {
                    prop_assert_eq!(r.end - r.start, c);
                }
                next = r.end;
            }
            prop_assert_eq!(next, n);
        }

        #[test]
        fn bytes_per_token_monotone(h in 1u32..5000, kv in 1u32..16, hd in 1u32..256, e in prop::sample::select(vec![1u32, 2, 4])) {
            for sizing in [SizingMode::HiddenKvHeads, SizingMode::PerHead] {
                let base = ModelConfig { num_layers: 1, hidden_dim: h, kv_heads: kv, head_dim: hd, bytes_per_element: e, sizing };
                let b = base.bytes_per_token();
                let bumped = [
                    ModelConfig { hidden_dim: h + 1, ..base },
                    ModelConfig { kv_heads: kv + 1, ..base },
                    ModelConfig { head_dim: hd + 1, ..base },
                    ModelConfig { bytes_per_element: (e * 2).min(4), ..base },
                ];
                for cfg in bumped {
                    prop_assert!(cfg.bytes_per_token() >= b);
                }
            }
        }
    }
}

//! Read accounting for chunk- and block-granular loads.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChunkGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IoStats {
    pub bytes_read: u64,
    pub tokens_read: u64,
    pub tokens_needed: u64,
    pub read_ops: u64,
    pub distinct_units_read: u64,
}

impl IoStats {
    pub fn merge(&mut self, other: &IoStats) {
        self.bytes_read += other.bytes_read;
        self.tokens_read += other.tokens_read;
        self.tokens_needed += other.tokens_needed;
        self.read_ops += other.read_ops;
        self.distinct_units_read += other.distinct_units_read;
    }
}

/// Exact `tokens_read / tokens_needed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadAmplification {
    pub read: u64,
    pub needed: u64,
}

impl ReadAmplification {
    pub fn ratio(&self) -> f64 {
        self.read as f64 / self.needed as f64
    }

    /// Integer display, rounded down.
    pub fn floor(&self) -> u64 {
        self.read / self.needed
    }
}

impl fmt::Display for ReadAmplification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.ratio())
    }
}

/// Token-based read amplification.
pub fn read_amplification(stats: &IoStats) -> Result<ReadAmplification> {
    if stats.tokens_needed == 0 {
        return Err(Error::NothingNeeded);
    }
    Ok(ReadAmplification { read: stats.tokens_read, needed: stats.tokens_needed })
}

/// Byte-based read amplification given the per-token footprint of the read kind.
pub fn byte_read_amplification(stats: &IoStats, bytes_per_token: u64) -> Result<ReadAmplification> {
    let needed = stats.tokens_needed * bytes_per_token;
    if needed == 0 {
        return Err(Error::NothingNeeded);
    }
    Ok(ReadAmplification { read: stats.bytes_read, needed })
}

/// Maximal runs of consecutive indices in a sorted, deduplicated slice.
pub fn coalesce_runs(sorted: &[u32]) -> Vec<Range<u32>> {
    let mut runs: Vec<Range<u32>> = Vec::new();
    for &i in sorted {
        match runs.last_mut() {
            Some(r) if r.end == i => r.end = i + 1,
            _ => runs.push(i..i + 1),
        }
    }
    runs
}

fn check_sorted_unique(indices: &[u32]) -> Result<()> {
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("indices must be sorted and deduplicated"));
    }
    Ok(())
}

/// Stats for loading whole units (chunks or blocks) where every token of each
/// unit is needed. Padding of the last unit is never counted.
pub fn unit_read_stats(geometry: &ChunkGeometry, units: &[u32], bytes_per_token: u64) -> Result<IoStats> {
    check_sorted_unique(units)?;
    let mut tokens = 0u64;
    for &u in units {
        tokens += u64::from(geometry.logical_len(u)?);
    }
    Ok(IoStats {
        bytes_read: tokens * bytes_per_token,
        tokens_read: tokens,
        tokens_needed: tokens,
        read_ops: coalesce_runs(units).len() as u64,
        distinct_units_read: units.len() as u64,
    })
}

/// Units containing at least one of the sorted `tokens`.
pub fn units_for_tokens(geometry: &ChunkGeometry, tokens: &[u32]) -> Result<Vec<u32>> {
    check_sorted_unique(tokens)?;
    let mut units: Vec<u32> = Vec::new();
    for &t in tokens {
        let u = geometry.chunk_of_token(t)?;
        if units.last() != Some(&u) {
            units.push(u);
        }
    }
    Ok(units)
}

/// Stats for loading every block that contains a needed token.
pub fn coarse_read_stats(block_geometry: &ChunkGeometry, needed_tokens: &[u32], bytes_per_token: u64) -> Result<IoStats> {
    let blocks = units_for_tokens(block_geometry, needed_tokens)?;
    let mut stats = unit_read_stats(block_geometry, &blocks, bytes_per_token)?;
    stats.tokens_needed = needed_tokens.len() as u64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn aligned_chunk_has_unit_amplification() {
        let g = ChunkGeometry::new(64, 16).unwrap();
        let s = unit_read_stats(&g, &[2], 10).unwrap();
        assert_eq!((s.tokens_read, s.tokens_needed), (16, 16));
        assert_eq!(read_amplification(&s).unwrap().ratio(), 1.0);
    }

    #[test]
    fn coalesces_adjacent_chunks() {
        let g = ChunkGeometry::new(128, 16).unwrap();
        let s = unit_read_stats(&g, &[3, 4, 5], 1).unwrap();
        assert_eq!(s.read_ops, 1);
        assert_eq!(s.distinct_units_read, 3);
        assert_eq!(coalesce_runs(&[0, 1, 3, 5, 6]), vec![0..2, 3..4, 5..7]);
    }

    #[test]
    fn empty_request_is_all_zero() {
        let g = ChunkGeometry::new(64, 16).unwrap();
        assert_eq!(unit_read_stats(&g, &[], 7).unwrap(), IoStats::default());
        assert!(read_amplification(&IoStats::default()).is_err());
    }

    #[test]
    fn scattered_tokens_amplify_52x() {
        let g = ChunkGeometry::new(1024, 64).unwrap();
        // 11 tokens over 9 blocks.
        let tokens = [3, 70, 71, 150, 200, 201, 300, 400, 500, 600, 700];
        let s = coarse_read_stats(&g, &tokens, 1).unwrap();
        assert_eq!(s.distinct_units_read, 9);
        assert_eq!(s.tokens_read, 576);
        let ra = read_amplification(&s).unwrap();
        assert!((ra.ratio() - 576.0 / 11.0).abs() < 1e-12);
        assert_eq!(ra.floor(), 52);
    }

    #[test]
    fn sixteen_of_sixty_four() {
        let g = ChunkGeometry::new(256, 64).unwrap();
        let tokens: Vec<u32> = (64..80).collect();
        let ra = read_amplification(&coarse_read_stats(&g, &tokens, 1).unwrap()).unwrap();
        assert_eq!(ra.ratio(), 4.0);
        let full: Vec<u32> = (0..64).collect();
        let ra = read_amplification(&coarse_read_stats(&g, &full, 1).unwrap()).unwrap();
        assert_eq!(ra.ratio(), 1.0);
    }

    #[test]
    fn partial_last_block_is_clipped() {
        let g = ChunkGeometry::new(100, 64).unwrap();
        let s = coarse_read_stats(&g, &[99], 2).unwrap();
        assert_eq!(s.tokens_read, 36);
        assert_eq!(s.bytes_read, 72);
        assert_eq!(byte_read_amplification(&s, 2).unwrap().ratio(), 36.0);
    }

    #[test]
    fn rejects_unsorted() {
        let g = ChunkGeometry::new(100, 10).unwrap();
        assert!(unit_read_stats(&g, &[2, 1], 1).is_err());
        assert!(coarse_read_stats(&g, &[5, 5], 1).is_err());
    }
}

//! Chunk importance scoring and budgeted selection.
//!
//! Token scores `a_i` come either from a trace or from [`attention_token_scores`];
//! chunk scores are `A_j = sum of a_i over chunk j`. Selection keeps the `k`
//! highest-scoring chunks, lower index first on ties, and returns them sorted.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{budget_count, ChunkGeometry};

/// Per-token importance for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub layer: u32,
    pub scores: Vec<f32>,
}

impl TokenScores {
    pub fn new(layer: u32, scores: Vec<f32>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { layer, scores })
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().map(|&a| f64::from(a)).sum()
    }
}

/// Per-chunk importance `A_j` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkScores {
    pub layer: u32,
    pub scores: Vec<f64>,
}

/// Sorted chunk (or token) indices chosen for one layer or period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    /// Layer whose scores produced the set.
    pub layer: u32,
    pub budget_ratio: f64,
    pub indices: Vec<u32>,
}

impl CriticalSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: u32) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }
}

pub fn chunk_scores(token_scores: &TokenScores, geometry: &ChunkGeometry) -> Result<ChunkScores> {
    let n = geometry.prefix_len() as usize;
    if token_scores.scores.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: token_scores.scores.len() });
    }
    let scores =
        token_scores.scores.chunks(geometry.chunk_size() as usize).map(|chunk| chunk.iter().map(|&a| f64::from(a)).sum()).collect();
    Ok(ChunkScores { layer: token_scores.layer, scores })
}

/// Indices of the `k` largest scores, ties to the lower index, sorted ascending.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    let by_rank = |a: &u32, b: &u32| -> Ordering { scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b)) };
    let k = k.min(order.len());
    if k == 0 {
        return Vec::new();
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

pub fn select_top_chunks(chunk_scores: &ChunkScores, budget_ratio: f64) -> Result<CriticalSet> {
    if !(budget_ratio > 0.0 && budget_ratio <= 1.0) {
        return Err(Error::InvalidBudget(budget_ratio));
    }
    if chunk_scores.scores.is_empty() {
        return Err(Error::Empty("chunk scores"));
    }
    let k = budget_count(budget_ratio, chunk_scores.scores.len() as u32);
    Ok(CriticalSet { layer: chunk_scores.layer, budget_ratio, indices: top_k_indices(&chunk_scores.scores, k as usize) })
}

/// `|a ∩ b| / |a|` over sorted index sets.
pub fn coverage_ratio(a: &CriticalSet, b: &CriticalSet) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("coverage reference set"));
    }
    Ok(intersection_len(&a.indices, &b.indices) as f64 / a.len() as f64)
}

pub(crate) fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch { expected: rows * cols, actual: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Token importance from raw attention: softmax over `q · kᵀ` per query row
/// (max-subtracted), summed over query rows. With `query_window = Some(w)` only
/// the last `w` query rows contribute.
pub fn attention_token_scores(layer: u32, queries: &Matrix, keys: &Matrix, query_window: Option<usize>) -> Result<TokenScores> {
    if queries.cols != keys.cols {
        return Err(Error::DimensionMismatch("query and key inner dimensions differ"));
    }
    if keys.rows == 0 || queries.rows == 0 {
        return Err(Error::Empty("attention inputs"));
    }
    if let Some(i) = queries.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if let Some(i) = keys.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let first_row = query_window.map_or(0, |w| queries.rows.saturating_sub(w));
    let mut acc = alloc::vec![0.0f64; keys.rows];
    let mut logits = alloc::vec![0.0f64; keys.rows];
    for r in first_row..queries.rows {
        let q = queries.row(r);
        for (t, logit) in logits.iter_mut().enumerate() {
            *logit = q.iter().zip(keys.row(t)).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for logit in logits.iter_mut() {
            *logit = libm::exp(*logit - max);
            denom += *logit;
        }
        for (a, e) in acc.iter_mut().zip(&logits) {
            *a += e / denom;
        }
    }
    TokenScores::new(layer, acc.into_iter().map(|a| a as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn cs(scores: Vec<f64>) -> ChunkScores {
        ChunkScores { layer: 0, scores }
    }

    fn set(indices: Vec<u32>) -> CriticalSet {
        CriticalSet { layer: 0, budget_ratio: 1.0, indices }
    }

    #[test]
    fn chunk_sums() {
        let g = ChunkGeometry::new(4, 2).unwrap();
        let t = TokenScores::new(0, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = chunk_scores(&t, &g).unwrap();
        assert!((a.scores[0] - 0.3).abs() < 1e-7);
        assert!((a.scores[1] - 0.7).abs() < 1e-7);

        let zero = TokenScores::new(0, vec![0.0; 4]).unwrap();
        assert_eq!(chunk_scores(&zero, &g).unwrap().scores, vec![0.0, 0.0]);

        let short = TokenScores::new(0, vec![0.0; 3]).unwrap();
        assert!(chunk_scores(&short, &g).is_err());
    }

    #[test]
    fn rejects_negative_scores() {
        assert!(TokenScores::new(0, vec![0.1, -0.1]).is_err());
        assert!(TokenScores::new(0, vec![f32::NAN]).is_err());
    }

    #[test]
    fn selection_examples() {
        let s = select_top_chunks(&cs(vec![1., 9., 2., 8., 3., 7., 4., 6.]), 0.25).unwrap();
        assert_eq!(s.indices, vec![1, 3]);
        let all = select_top_chunks(&cs(vec![3., 1., 2.]), 1.0).unwrap();
        assert_eq!(all.indices, vec![0, 1, 2]);
        let tie = select_top_chunks(&cs(vec![1.0; 4]), 0.5).unwrap();
        assert_eq!(tie.indices, vec![0, 1]);
        assert!(select_top_chunks(&cs(vec![]), 0.5).is_err());
        assert!(select_top_chunks(&cs(vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_ratio(&set(vec![1, 2, 3, 4]), &set(vec![3, 4, 5, 6])).unwrap(), 0.5);
        assert_eq!(coverage_ratio(&set(vec![1, 2]), &set(vec![1, 2])).unwrap(), 1.0);
        assert_eq!(coverage_ratio(&set(vec![1, 2]), &set(vec![3])).unwrap(), 0.0);
        assert!(coverage_ratio(&set(vec![]), &set(vec![3])).is_err());
    }

    #[test]
    fn uniform_attention() {
        let q = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let k = Matrix::new(4, 2, vec![0.5, 1.0, 0.5, 2.0, 0.5, 3.0, 0.5, 4.0]).unwrap();
        let a = attention_token_scores(0, &q, &k, None).unwrap();
        for x in a.scores {
            assert!((x - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_attention() {
        let q = Matrix::new(1, 1, vec![1.0]).unwrap();
        let k = Matrix::new(3, 1, vec![0.0, 50.0, 0.0]).unwrap();
        let a = attention_token_scores(0, &q, &k, None).unwrap();
        assert!((a.scores[1] - 1.0).abs() < 1e-6);
        assert!(a.scores[0] < 1e-6);
    }

    #[test]
    fn attention_errors() {
        let q = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let k = Matrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(attention_token_scores(0, &q, &k, None).is_err());
        let kinf = Matrix::new(1, 2, vec![f32::INFINITY, 0.0]).unwrap();
        assert!(attention_token_scores(0, &q, &kinf, None).is_err());
    }

    #[test]
    fn query_window_limits_rows() {
        let q = Matrix::new(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let k = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let a = attention_token_scores(0, &q, &k, Some(1)).unwrap();
        assert!((a.total() - 1.0).abs() < 1e-6);
    }

    /// Exhaustive best-k: max total, ties to the lexicographically smallest index set.
    fn brute_force_best(scores: &[f64], k: usize) -> Vec<u32> {
        let m = scores.len();
        let mut best: Option<(f64, Vec<u32>)> = None;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let idx: Vec<u32> = (0..m as u32).filter(|i| mask & (1 << i) != 0).collect();
            let mut vals: Vec<f64> = idx.iter().map(|&i| scores[i as usize]).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = vals.iter().sum();
            let better = match &best {
                None => true,
                Some((bt, bi)) => total > *bt || (total == *bt && idx < *bi),
            };
            if better {
                best = Some((total, idx));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn conservation(scores in prop::collection::vec(0.0f32..10.0, 1..600), c in 1u32..40) {
            let n = scores.len() as u32;
            let g = ChunkGeometry::new(n, c).unwrap();
            let t = TokenScores::new(0, scores).unwrap();
            let a = chunk_scores(&t, &g).unwrap();
            let lhs: f64 = a.scores.iter().sum();
            let rhs = t.total();
            let tol = (g.num_chunks() as f64) * f64::EPSILON * rhs.abs().max(1.0);
            prop_assert!((lhs - rhs).abs() <= tol);
        }

        #[test]
        fn selection_is_optimal(scores in prop::collection::vec(0u8..6, 1..12), k in 1usize..12) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let k = k.min(scores.len());
            prop_assert_eq!(top_k_indices(&scores, k), brute_force_best(&scores, k));
        }

        #[test]
        fn selection_is_nested(scores in prop::collection::vec(0.0f64..1.0, 1..64), r1 in 0.01f64..1.0, r2 in 0.01f64..1.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = select_top_chunks(&cs(scores.clone()), lo).unwrap();
            let b = select_top_chunks(&cs(scores), hi).unwrap();
            prop_assert!(a.indices.iter().all(|i| b.contains(*i)));
            prop_assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn coverage_bounds(a in prop::collection::btree_set(0u32..50, 1..20), b in prop::collection::btree_set(0u32..50, 0..20)) {
            let a = set(a.into_iter().collect());
            let b = set(b.into_iter().collect());
            let cov = coverage_ratio(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&cov));
            prop_assert_eq!(coverage_ratio(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn softmax_rows_normalize(nq in 1usize..5, n in 1usize..40, d in 1usize..8, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let q = Matrix::new(nq, d, (0..nq * d).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap();
            let k = Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap();
            let a = attention_token_scores(0, &q, &k, None).unwrap();
            prop_assert!((a.total() - nq as f64).abs() < 1e-5);
            prop_assert!(a.scores.iter().all(|&x| x >= 0.0));
        }
    }
}

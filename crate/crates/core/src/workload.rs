//! Synthetic attention traces.
//!
//! A trace stands in for a live model: for each request and layer it carries
//! the token importance vector that selection and the cache policy consume.
//!
//! Scores of layer `l + 1` are a convex blend of layer `l` and fresh noise,
//! renormalized to unit mass. Requests sharing a prefix also share a per-prefix
//! base chain, blended in with weight `request_correlation`, so the same chunks
//! tend to matter across requests. The user-facing `similarity` knob is the
//! target mean coverage between critical sets of adjacent periods; the
//! per-layer blend weight that achieves it is found by bisection against a
//! Monte-Carlo estimate of that same coverage.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::{
    attention_token_scores, chunk_scores, intersection_len, select_top_chunks, top_k_indices, CriticalSet, Matrix, TokenScores,
};
use crate::model::{budget_count, BudgetConfig, ChunkGeometry, ModelConfig, PrefixId};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Largest head dimension / prefix length the toy attention path is sized for.
pub const DESK_MAX_HEAD_DIM: u32 = 128;
pub const DESK_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    /// `1 / rank^alpha` over a random permutation of the segments.
    Zipf {
        alpha: f64,
    },
    Uniform,
    /// Softmax attention over synthetic queries and keys.
    FromQk {
        head_dim: u32,
        max_queries: u32,
    },
}

impl Default for ScoreDistribution {
    fn default() -> Self {
        ScoreDistribution::Zipf { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Target adjacent-period coverage in `[0, 1]`. For `FromQk` this is the
    /// cross-layer key correlation instead.
    pub similarity: f64,
    pub distribution: ScoreDistribution,
    /// Weight of the per-prefix component shared by all requests of a prefix.
    pub request_correlation: f64,
    /// Budget and period layout the similarity target is calibrated against.
    pub calibration: BudgetConfig,
    /// Mean length of the contiguous spans that share one importance draw.
    /// Spans are fixed per prefix and not aligned to chunks; 1 makes every
    /// token independent.
    #[serde(default = "default_segment_tokens")]
    pub segment_tokens: u32,
}

fn default_segment_tokens() -> u32 {
    16
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            similarity: 0.58,
            distribution: ScoreDistribution::default(),
            request_correlation: 0.8,
            calibration: BudgetConfig::default(),
            segment_tokens: default_segment_tokens(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub prefix: PrefixId,
    pub suffix_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub geometry: ChunkGeometry,
    pub requests: Vec<RequestSpec>,
    pub generator: GeneratorSpec,
}

impl TraceManifest {
    /// `num_prefixes` prefixes, each served `requests_per_prefix` times,
    /// requests interleaved round-robin across prefixes.
    pub fn round_robin(
        model: ModelConfig,
        geometry: ChunkGeometry,
        num_prefixes: u32,
        requests_per_prefix: u32,
        suffix_tokens: u32,
        generator: GeneratorSpec,
    ) -> Self {
        let mut requests = Vec::new();
        for _ in 0..requests_per_prefix {
            for p in 0..num_prefixes {
                requests.push(RequestSpec { prefix: PrefixId(u64::from(p)), suffix_tokens });
            }
        }
        Self { format_version: TRACE_FORMAT_VERSION, model, geometry, requests, generator }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let g = &self.generator;
        if !(0.0..=1.0).contains(&g.similarity) {
            return Err(Error::InvalidConfig("similarity must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&g.request_correlation) {
            return Err(Error::InvalidConfig("request_correlation must lie in [0, 1]"));
        }
        if self.geometry.num_chunks() < 2 {
            return Err(Error::InvalidConfig("at least two chunks are needed to control similarity"));
        }
        g.calibration.validate(self.model.num_layers)?;
        if g.segment_tokens == 0 {
            return Err(Error::InvalidConfig("segment_tokens must be >= 1"));
        }
        if let ScoreDistribution::Zipf { alpha } = g.distribution {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(Error::InvalidConfig("zipf alpha must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub prefix: PrefixId,
    pub suffix_tokens: u32,
    /// One entry per layer, each of length `n`.
    pub layers: Vec<TokenScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub manifest: TraceManifest,
    pub requests: Vec<RequestTrace>,
}

impl AttentionTrace {
    pub fn request(&self, idx: usize) -> Result<&RequestTrace> {
        self.requests.get(idx).ok_or(Error::TraceExhausted(idx))
    }
}

/// Result of the synthetic-QK path together with any desk-scale warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct QkScores {
    pub layers: Vec<TokenScores>,
    pub warnings: Vec<&'static str>,
}

/// Span start offsets with lengths uniform in `[1, 2 * mean - 1]`.
fn draw_segments(rng: &mut ChaCha8Rng, n: usize, mean: u32) -> Vec<u32> {
    if mean <= 1 {
        return (0..n as u32).collect();
    }
    let mut starts = Vec::with_capacity(n / mean as usize + 1);
    let mut at = 0u32;
    while (at as usize) < n {
        starts.push(at);
        at += rng.random_range(1..2 * mean);
    }
    starts
}

fn sample_noise(rng: &mut ChaCha8Rng, dist: ScoreDistribution, starts: &[u32], out: &mut [f64]) {
    let n = out.len();
    let spans = starts.len();
    let mut level = vec![0.0; spans];
    match dist {
        ScoreDistribution::Zipf { alpha } => {
            let mut ranks: Vec<u32> = (1..=spans as u32).collect();
            ranks.shuffle(rng);
            for (o, r) in level.iter_mut().zip(ranks) {
                *o = libm::pow(f64::from(r), -alpha);
            }
        }
        ScoreDistribution::Uniform | ScoreDistribution::FromQk { .. } => {
            for o in level.iter_mut() {
                *o = rng.random::<f64>();
            }
        }
    }
    if spans == n {
        out.copy_from_slice(&level);
        return;
    }
    for (s, &v) in level.iter().enumerate() {
        let end = starts.get(s + 1).map_or(n, |&e| e as usize);
        for o in &mut out[starts[s] as usize..end] {
            *o = v * (0.5 + rng.random::<f64>());
        }
    }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
}

/// `dst = normalize(w * dst + (1 - w) * noise)`.
fn blend_into(dst: &mut [f64], noise: &[f64], w: f64) {
    if w >= 1.0 {
        return;
    }
    for (d, z) in dst.iter_mut().zip(noise) {
        *d = w * *d + (1.0 - w) * z;
    }
    normalize(dst);
}

fn combine(base: &[f64], own: &[f64], rho: f64) -> Vec<f64> {
    let mut v: Vec<f64> = base.iter().zip(own).map(|(b, o)| rho * b + (1.0 - rho) * o).collect();
    normalize(&mut v);
    v
}

/// Expected coverage of two independent uniformly random `k`-subsets of `m`.
pub fn chance_coverage(budget_ratio: f64, m: u32) -> f64 {
    f64::from(budget_count(budget_ratio, m)) / f64::from(m)
}

const CALIBRATION_CHAINS: usize = 12;
const CALIBRATION_STEPS: usize = 24;
const CALIBRATION_STREAM: u64 = 0xCA1B;

/// Common random numbers for calibration: per chain, base and own noise for
/// every layer of the model (at least one full period plus one layer).
struct CalibrationNoise {
    chains: Vec<[Vec<Vec<f64>>; 2]>,
}

impl CalibrationNoise {
    fn draw(spec: &GeneratorSpec, n: usize, layers: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(CALIBRATION_STREAM);
        let steps = layers.max(spec.calibration.period_size as usize + 1);
        let chains = (0..CALIBRATION_CHAINS)
            .map(|_| {
                let starts = draw_segments(&mut rng, n, spec.segment_tokens);
                let mut draw = || {
                    (0..steps)
                        .map(|_| {
                            let mut v = vec![0.0; n];
                            sample_noise(&mut rng, spec.distribution, &starts, &mut v);
                            normalize(&mut v);
                            v
                        })
                        .collect::<Vec<_>>()
                };
                [draw(), draw()]
            })
            .collect();
        Self { chains }
    }

    /// Mean coverage over every adjacent pair of period-start layers.
    fn mean_coverage(&self, spec: &GeneratorSpec, geometry: &ChunkGeometry, w: f64) -> f64 {
        let m = geometry.num_chunks();
        let k = budget_count(spec.calibration.budget_ratio, m) as usize;
        let p = spec.calibration.period_size as usize;
        let rho = spec.request_correlation;
        let critical = |v: &[f64]| {
            let ts = TokenScores { layer: 0, scores: v.iter().map(|&x| x as f32).collect() };
            let cs = chunk_scores(&ts, geometry).expect("calibration geometry");
            top_k_indices(&cs.scores, k)
        };
        let (mut total, mut pairs) = (0.0, 0usize);
        for [base_noise, own_noise] in &self.chains {
            let mut base = base_noise[0].clone();
            let mut own = own_noise[0].clone();
            let mut prev = critical(&combine(&base, &own, rho));
            for step in 1..base_noise.len() {
                blend_into(&mut base, &base_noise[step], w);
                blend_into(&mut own, &own_noise[step], w);
                if step % p == 0 {
                    let cur = critical(&combine(&base, &own, rho));
                    total += intersection_len(&prev, &cur) as f64 / k as f64;
                    pairs += 1;
                    prev = cur;
                }
            }
        }
        total / pairs as f64
    }
}

/// Per-layer blend weight whose Monte-Carlo adjacent-period coverage,
/// averaged over a `layers`-deep model, matches `spec.similarity`, together
/// with that predicted coverage. Targets at or below chance coverage map to
/// weight 0.
pub fn calibrate_blend_weight(spec: &GeneratorSpec, geometry: &ChunkGeometry, layers: u32) -> (f64, f64) {
    let noise = CalibrationNoise::draw(spec, geometry.prefix_len() as usize, layers as usize);
    let target = spec.similarity;
    if target >= 1.0 {
        return (1.0, 1.0);
    }
    let at_zero = noise.mean_coverage(spec, geometry, 0.0);
    if target <= at_zero {
        return (0.0, at_zero);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        if noise.mean_coverage(spec, geometry, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    (w, noise.mean_coverage(spec, geometry, w))
}

pub fn generate_trace(manifest: &TraceManifest) -> Result<AttentionTrace> {
    manifest.validate()?;
    let spec = manifest.generator;
    let geometry = manifest.geometry;
    let n = geometry.prefix_len() as usize;
    let layers = manifest.model.num_layers as usize;

    if let ScoreDistribution::FromQk { head_dim, max_queries } = spec.distribution {
        return generate_from_qk(manifest, head_dim, max_queries);
    }

    let (w, _) = calibrate_blend_weight(&spec, &geometry, manifest.model.num_layers);
    let rho = spec.request_correlation;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise = vec![0.0; n];
    let mut chain = |rng: &mut ChaCha8Rng, starts: &[u32]| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut cur = vec![0.0; n];
        sample_noise(rng, spec.distribution, starts, &mut cur);
        normalize(&mut cur);
        out.push(cur.clone());
        for _ in 1..layers {
            sample_noise(rng, spec.distribution, starts, &mut noise);
            normalize(&mut noise);
            blend_into(&mut cur, &noise, w);
            out.push(cur.clone());
        }
        out
    };

    let mut bases: BTreeMap<PrefixId, (Vec<u32>, Vec<Vec<f64>>)> = BTreeMap::new();
    for req in &manifest.requests {
        if let alloc::collections::btree_map::Entry::Vacant(e) = bases.entry(req.prefix) {
            let starts = draw_segments(&mut rng, n, spec.segment_tokens);
            let base = chain(&mut rng, &starts);
            e.insert((starts, base));
        }
    }
    let requests = manifest
        .requests
        .iter()
        .map(|req| {
            let (starts, base) = &bases[&req.prefix];
            let own = chain(&mut rng, starts);
            let layers = base
                .iter()
                .zip(&own)
                .enumerate()
                .map(|(l, (b, o))| TokenScores { layer: l as u32, scores: combine(b, o, rho).into_iter().map(|x| x as f32).collect() })
                .collect();
            RequestTrace { prefix: req.prefix, suffix_tokens: req.suffix_tokens, layers }
        })
        .collect();
    Ok(AttentionTrace { manifest: manifest.clone(), requests })
}

fn generate_from_qk(manifest: &TraceManifest, head_dim: u32, max_queries: u32) -> Result<AttentionTrace> {
    let spec = manifest.generator;
    let n = manifest.geometry.prefix_len();
    let mut prefix_seeds: BTreeMap<PrefixId, u64> = BTreeMap::new();
    let mut requests = Vec::with_capacity(manifest.requests.len());
    for (i, req) in manifest.requests.iter().enumerate() {
        let next = prefix_seeds.len() as u64;
        let key_seed = *prefix_seeds.entry(req.prefix).or_insert(spec.seed ^ (next << 32));
        let nq = req.suffix_tokens.clamp(1, max_queries.max(1));
        let model = ModelConfig { head_dim, ..manifest.model };
        let qk = scores_from_synthetic_qk_split(key_seed, spec.seed.wrapping_add(1 + i as u64), &model, n, spec.similarity, nq, false)?;
        requests.push(RequestTrace { prefix: req.prefix, suffix_tokens: req.suffix_tokens, layers: qk.layers });
    }
    Ok(AttentionTrace { manifest: manifest.clone(), requests })
}

/// Per-layer token scores from real softmax attention over synthetic data.
///
/// Keys follow `K_{l+1} = s K_l + sqrt(1 - s^2) G` with standard normal `G`;
/// queries are drawn from `N(0, 1/d)` per layer, or once for all layers when
/// `shared_queries` is set.
pub fn scores_from_synthetic_qk(
    seed: u64,
    model: &ModelConfig,
    n: u32,
    correlation: f64,
    num_queries: u32,
    shared_queries: bool,
) -> Result<QkScores> {
    scores_from_synthetic_qk_split(seed, seed, model, n, correlation, num_queries, shared_queries)
}

fn scores_from_synthetic_qk_split(
    key_seed: u64,
    query_seed: u64,
    model: &ModelConfig,
    n: u32,
    correlation: f64,
    num_queries: u32,
    shared_queries: bool,
) -> Result<QkScores> {
    model.validate()?;
    if !(0.0..=1.0).contains(&correlation) {
        return Err(Error::InvalidConfig("correlation must lie in [0, 1]"));
    }
    if n == 0 || num_queries == 0 {
        return Err(Error::Empty("synthetic attention shape"));
    }
    let mut warnings = Vec::new();
    if model.head_dim > DESK_MAX_HEAD_DIM {
        warnings.push("head_dim above desk-scale bound; generation may be slow");
    }
    if n > DESK_MAX_TOKENS {
        warnings.push("prefix length above desk-scale bound; generation may be slow");
    }
    let d = model.head_dim as usize;
    let (n, nq) = (n as usize, num_queries as usize);
    let mut key_rng = ChaCha8Rng::seed_from_u64(key_seed);
    let mut query_rng = ChaCha8Rng::seed_from_u64(query_seed);
    query_rng.set_stream(1);
    let q_scale = 1.0 / libm::sqrt(d as f64);
    let fresh = libm::sqrt(1.0 - correlation * correlation);

    let mut keys: Vec<f64> = (0..n * d).map(|_| key_rng.sample(StandardNormal)).collect();
    let draw_queries = |rng: &mut ChaCha8Rng| -> Matrix {
        let data = (0..nq * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (z * q_scale) as f32
            })
            .collect();
        Matrix { rows: nq, cols: d, data }
    };
    let shared = draw_queries(&mut query_rng);
    let mut layers = Vec::with_capacity(model.num_layers as usize);
    for l in 0..model.num_layers {
        if l > 0 && correlation < 1.0 {
            for k in keys.iter_mut() {
                let g: f64 = key_rng.sample(StandardNormal);
                *k = correlation * *k + fresh * g;
            }
        }
        let key_matrix = Matrix { rows: n, cols: d, data: keys.iter().map(|&x| x as f32).collect() };
        let queries = if shared_queries { shared.clone() } else { draw_queries(&mut query_rng) };
        layers.push(attention_token_scores(l, &queries, &key_matrix, None)?);
    }
    Ok(QkScores { layers, warnings })
}

/// Critical sets at the first layer of every period of one request.
pub fn period_critical_sets(request: &RequestTrace, geometry: &ChunkGeometry, budget: &BudgetConfig) -> Result<Vec<CriticalSet>> {
    request
        .layers
        .iter()
        .step_by(budget.period_size as usize)
        .map(|ts| select_top_chunks(&chunk_scores(ts, geometry)?, budget.budget_ratio))
        .collect()
}

/// Coverage between critical sets of each pair of adjacent periods.
pub fn adjacent_period_coverage(request: &RequestTrace, geometry: &ChunkGeometry, budget: &BudgetConfig) -> Result<Vec<f64>> {
    let sets = period_critical_sets(request, geometry, budget)?;
    sets.windows(2).map(|w| crate::importance::coverage_ratio(&w[0], &w[1])).collect()
}

/// Mean adjacent-period coverage, averaged per request and over all pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_request: Vec<f64>,
    pub per_boundary: Vec<f64>,
    pub overall: f64,
}

pub fn similarity_report(trace: &AttentionTrace, budget: &BudgetConfig) -> Result<SimilarityReport> {
    let geometry = trace.manifest.geometry;
    let mut per_request = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let (mut total, mut count) = (0.0, 0usize);
    for req in &trace.requests {
        let cov = adjacent_period_coverage(req, &geometry, budget)?;
        if cov.is_empty() {
            continue;
        }
        per_request.push(cov.iter().sum::<f64>() / cov.len() as f64);
        if sums.len() < cov.len() {
            sums.resize(cov.len(), (0.0, 0));
        }
        for (s, c) in sums.iter_mut().zip(&cov) {
            s.0 += c;
            s.1 += 1;
        }
        total += cov.iter().sum::<f64>();
        count += cov.len();
    }
    if count == 0 {
        return Err(Error::Empty("no adjacent periods to compare"));
    }
    Ok(SimilarityReport { per_request, per_boundary: sums.into_iter().map(|(s, c)| s / c as f64).collect(), overall: total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_manifest(similarity: f64, dist: ScoreDistribution) -> TraceManifest {
        let model = ModelConfig { num_layers: 16, ..ModelConfig::qwen7b_like() };
        let geometry = ChunkGeometry::new(1024, 16).unwrap();
        let generator = GeneratorSpec {
            similarity,
            distribution: dist,
            calibration: BudgetConfig { budget_ratio: 0.25, period_size: 4, subperiod_size: 2 },
            ..GeneratorSpec::default()
        };
        TraceManifest::round_robin(model, geometry, 2, 2, 32, generator)
    }

    #[test]
    fn full_similarity_repeats_layers() {
        let m = small_manifest(1.0, ScoreDistribution::default());
        let t = generate_trace(&m).unwrap();
        for req in &t.requests {
            for l in &req.layers[1..] {
                assert_eq!(l.scores, req.layers[0].scores);
            }
        }
        let rep = similarity_report(&t, &m.generator.calibration).unwrap();
        assert_eq!(rep.overall, 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let m = small_manifest(0.6, ScoreDistribution::default());
        assert_eq!(generate_trace(&m).unwrap(), generate_trace(&m).unwrap());
        let mut other = m.clone();
        other.generator.seed = 7;
        assert_ne!(generate_trace(&m).unwrap(), generate_trace(&other).unwrap());
    }

    #[test]
    fn rejects_degenerate_geometry() {
        let mut m = small_manifest(0.5, ScoreDistribution::default());
        m.geometry = ChunkGeometry::new(16, 16).unwrap();
        assert!(generate_trace(&m).is_err());
        let mut m = small_manifest(1.5, ScoreDistribution::default());
        m.geometry = ChunkGeometry::new(64, 16).unwrap();
        assert!(generate_trace(&m).is_err());
    }

    #[test]
    fn scores_are_normalized_and_shaped() {
        let m = small_manifest(0.5, ScoreDistribution::Uniform);
        let t = generate_trace(&m).unwrap();
        assert_eq!(t.requests.len(), 4);
        for req in &t.requests {
            assert_eq!(req.layers.len(), 16);
            for l in &req.layers {
                assert_eq!(l.scores.len(), 1024);
                assert!((l.total() - 1.0).abs() < 1e-4);
                assert!(l.scores.iter().all(|x| x.is_finite() && *x >= 0.0));
            }
        }
    }

    #[test]
    fn calibration_is_monotone_in_target() {
        let m = small_manifest(0.0, ScoreDistribution::default());
        let mut prev = -1.0;
        for target in [0.3, 0.5, 0.7, 0.9] {
            let spec = GeneratorSpec { similarity: target, ..m.generator };
            let (w, predicted) = calibrate_blend_weight(&spec, &m.geometry, m.model.num_layers);
            assert!(w > prev, "target {target} gave weight {w}");
            assert!((predicted - target).abs() < 0.05, "target {target} predicted {predicted}");
            prev = w;
        }
    }

    #[test]
    fn qk_shared_queries_full_correlation() {
        let model = ModelConfig { num_layers: 4, head_dim: 16, ..ModelConfig::qwen7b_like() };
        let qk = scores_from_synthetic_qk(42, &model, 128, 1.0, 3, true).unwrap();
        for l in &qk.layers[1..] {
            assert_eq!(l.scores, qk.layers[0].scores);
        }
        for l in &qk.layers {
            assert!((l.total() - 3.0).abs() < 1e-6);
        }
        assert!(qk.warnings.is_empty());
        assert_eq!(qk, scores_from_synthetic_qk(42, &model, 128, 1.0, 3, true).unwrap());
    }

    #[test]
    fn qk_warns_beyond_desk_scale() {
        let model = ModelConfig { num_layers: 1, head_dim: 256, ..ModelConfig::qwen7b_like() };
        let qk = scores_from_synthetic_qk(1, &model, 8, 0.5, 1, false).unwrap();
        assert_eq!(qk.warnings.len(), 1);
    }

    #[test]
    fn qk_distribution_feeds_trace() {
        let m = small_manifest(0.9, ScoreDistribution::FromQk { head_dim: 8, max_queries: 4 });
        let t = generate_trace(&m).unwrap();
        for req in &t.requests {
            for l in &req.layers {
                assert!((l.total() - 4.0).abs() < 1e-5);
            }
        }
    }
}

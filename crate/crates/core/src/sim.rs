//! Re-Prefill simulation for ContiguousKV and the coarse-block baselines.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::{FrequencyMode, PolicyKind, Residency, Tier, TierConfig, TieredCache};
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::importance::{chunk_scores, select_top_chunks, top_k_indices, ChunkScores, CriticalSet};
use crate::io::{coalesce_runs, read_amplification, unit_read_stats, units_for_tokens, IoStats};
use crate::model::{budget_count, BudgetConfig, ChunkGeometry, ChunkKey, ModelConfig, PrefixId};
use crate::pipeline::{
    breakdown_report, execute, layer_works, plan_period, speculative_inter_period_prefetch, verify_schedule, LayerWork, PeriodPlan,
    PipelineBuilder, PipelineMode, Resource, Schedule, SpeculativeIssue, StageBreakdown, StageShares, TaskGraph, TaskKind,
};
use crate::workload::{AttentionTrace, RequestTrace};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    #[serde(rename = "contiguouskv")]
    ContiguousKv,
    AsLru,
    AsH2oLfu,
    ImpressLike,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 4] = [PipelineKind::ContiguousKv, PipelineKind::AsLru, PipelineKind::AsH2oLfu, PipelineKind::ImpressLike];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::ContiguousKv => "contiguouskv",
            PipelineKind::AsLru => "as_lru",
            PipelineKind::AsH2oLfu => "as_h2o_lfu",
            PipelineKind::ImpressLike => "impress_like",
        }
    }

    /// Baselines store and cache 64-token blocks and identify per layer.
    pub fn is_coarse(self) -> bool {
        self != PipelineKind::ContiguousKv
    }
}

impl FromStr for PipelineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownPipeline(s.to_string()))
    }
}

/// Which upcoming layers receive speculative loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeculationScope {
    /// The first `subperiod_size` layers of the next period.
    #[default]
    Subperiod,
    FullPeriod,
}

pub const DEFAULT_CHUNK_TOKENS: u32 = 16;
pub const DEFAULT_BLOCK_TOKENS: u32 = 64;
pub const DEFAULT_PROBE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub kind: PipelineKind,
    /// Chunk size for contiguouskv, block size for the baselines.
    pub chunk_tokens: u32,
    pub budget: BudgetConfig,
    pub tiers: TierConfig,
    pub device: DeviceModel,
    pub policy: PolicyKind,
    pub frequency_mode: FrequencyMode,
    pub mode: PipelineMode,
    pub speculation: SpeculationScope,
    /// Fraction of the prefix key bytes read by each probe.
    pub probe_fraction: f64,
}

impl SystemConfig {
    pub fn preset(kind: PipelineKind, budget_ratio: f64) -> Self {
        let (chunk_tokens, budget, policy, mode) = match kind {
            PipelineKind::ContiguousKv => (
                DEFAULT_CHUNK_TOKENS,
                BudgetConfig { budget_ratio, ..BudgetConfig::default() },
                PolicyKind::AttentionGuided,
                PipelineMode::IntraInter,
            ),
            other => (
                DEFAULT_BLOCK_TOKENS,
                BudgetConfig { budget_ratio, period_size: 1, subperiod_size: 1 },
                match other {
                    PipelineKind::AsLru => PolicyKind::Lru,
                    PipelineKind::AsH2oLfu => PolicyKind::Lfu,
                    _ => PolicyKind::ImpressLike,
                },
                PipelineMode::Intra,
            ),
        };
        Self {
            kind,
            chunk_tokens,
            budget,
            tiers: TierConfig::default(),
            device: DeviceModel::nvme_pcie4_preset(),
            policy,
            frequency_mode: FrequencyMode::default(),
            mode,
            speculation: SpeculationScope::default(),
            probe_fraction: match kind {
                PipelineKind::AsH2oLfu | PipelineKind::AsLru => 1.0,
                _ => DEFAULT_PROBE_FRACTION,
            },
        }
    }

    pub fn with_mode(mut self, mode: PipelineMode) -> Self {
        self.mode = mode;
        self
    }

    /// Report name: the pipeline kind, suffixed with the mode when it is not
    /// the kind's default.
    pub fn label(&self) -> String {
        let default = SystemConfig::preset(self.kind, self.budget.budget_ratio).mode;
        if self.mode == default {
            self.kind.as_str().to_string()
        } else {
            format!("{}[{}]", self.kind.as_str(), self.mode.as_str())
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        model.validate()?;
        self.budget.validate(model.num_layers)?;
        self.tiers.validate()?;
        self.device.validate()?;
        if self.chunk_tokens == 0 {
            return Err(Error::InvalidConfig("chunk size must be positive"));
        }
        if self.kind.is_coarse() && (self.budget.period_size != 1 || self.budget.subperiod_size != 1) {
            return Err(Error::InvalidConfig("baseline pipelines identify every layer (period = subperiod = 1)"));
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction <= 1.0) {
            return Err(Error::InvalidConfig("probe fraction must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn new_cache(&self) -> Result<TieredCache> {
        Ok(TieredCache::new(self.policy, self.tiers)?.with_frequency_mode(self.frequency_mode))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub system: String,
    pub pass: u32,
    pub request: usize,
    pub prefix: PrefixId,
    pub ttft_ticks: u64,
    pub ttft_s: f64,
    pub breakdown: StageBreakdown,
    /// Demand plus speculative KV tokens read from the SSD (probes excluded).
    pub tokens_loaded_from_ssd: u64,
    /// Demand loads only; `tokens_needed` counts the missed tokens.
    pub demand: IoStats,
    pub speculative_tokens_loaded: u64,
    pub speculative_tokens_used: u64,
    pub probe_bytes: u64,
    pub ssd_bytes: u64,
    pub link_bytes: u64,
    pub read_amplification: Option<f64>,
    pub units_needed: u64,
    pub fast_hits: u64,
    pub mid_hits: u64,
    pub fast_hit_rate: f64,
    pub mid_hit_rate: f64,
    pub period_delta_chunks: Vec<u32>,
    pub period_latency_ticks: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct RequestOutcome {
    pub metrics: RequestMetrics,
    /// Empty for the baselines.
    pub plans: Vec<PeriodPlan>,
    pub graph: TaskGraph,
    pub schedule: Schedule,
}

#[derive(Default)]
struct Counters {
    demand: IoStats,
    spec_loaded: u64,
    spec_used: u64,
    units_needed: u64,
    fast_hits: u64,
    mid_hits: u64,
    deltas: Vec<u32>,
}

fn logical_tokens(geometry: &ChunkGeometry, units: &[u32]) -> Result<u64> {
    let mut t = 0u64;
    for &u in units {
        t += u64::from(geometry.logical_len(u)?);
    }
    Ok(t)
}

fn touch_and_admit(
    cache: &mut TieredCache,
    prefix: PrefixId,
    layer: u32,
    units: &[u32],
    scores: &ChunkScores,
    geometry: &ChunkGeometry,
    bytes_per_token: u64,
) -> Result<()> {
    for &j in units {
        let key = ChunkKey::new(prefix, layer, j);
        cache.touch_and_update(key, scores.scores[j as usize]);
        let size = u64::from(geometry.logical_len(j)?) * bytes_per_token;
        if size <= cache.config().cache_capacity(Tier::Fast) {
            cache.admit(key, size, Tier::Fast)?;
        } else if size <= cache.config().cache_capacity(Tier::Mid) {
            cache.admit(key, size, Tier::Mid)?;
        }
    }
    Ok(())
}

fn probe_bytes(cfg: &SystemConfig, model: &ModelConfig, n: u32) -> u64 {
    libm::ceil((u64::from(n) * model.key_bytes_per_token()) as f64 * cfg.probe_fraction) as u64
}

/// SSD ticks for the first `keep` chunks of a speculative issue.
fn speculative_prefix_ticks(
    issue: &SpeculativeIssue,
    keep: u32,
    geometry: &ChunkGeometry,
    bytes_per_token: u64,
    device: &DeviceModel,
) -> Result<u64> {
    let mut left = keep as usize;
    let mut ticks = 0u64;
    for load in &issue.loads {
        if left == 0 {
            break;
        }
        let chunks = &load.chunks[..left.min(load.chunks.len())];
        left -= chunks.len();
        let bytes = logical_tokens(geometry, chunks)? * bytes_per_token;
        ticks += device.ssd_ticks(bytes, coalesce_runs(chunks).len() as u64);
    }
    Ok(ticks)
}

fn simulate_chunked(
    cfg: &SystemConfig,
    model: &ModelConfig,
    req: &RequestTrace,
    cache: &mut TieredCache,
    b: &mut PipelineBuilder,
    acc: &mut Counters,
) -> Result<Vec<PeriodPlan>> {
    let n = req.layers[0].scores.len() as u32;
    let geometry = ChunkGeometry::new(n, cfg.chunk_tokens)?;
    let bpt = model.bytes_per_token();
    let p = cfg.budget.period_size;
    let sp = cfg.budget.subperiod_size;
    let mut previous: Option<CriticalSet> = None;
    let mut plans = Vec::new();
    let mut first = 0u32;
    let mut period = 0u32;
    while first < model.num_layers {
        let end = (first + p).min(model.num_layers);
        let head = b.begin_period(period, first, Some(probe_bytes(cfg, model, n)), Some(u64::from(n)));
        let scores_first = chunk_scores(&req.layers[first as usize], &geometry)?;
        let identified = select_top_chunks(&scores_first, cfg.budget.budget_ratio)?;
        let mut issue = SpeculativeIssue::default();
        if let (PipelineMode::IntraInter, Some(prev)) = (cfg.mode, &previous) {
            // The SSD is idle before identification ends only if demand loads
            // are waiting on it; otherwise it would move on to the next probe.
            let without = plan_period(period, first..end, &identified, SpeculativeIssue::default(), sp, cache, req.prefix)?;
            if without.delta_chunks() > 0 {
                let spec_end = match cfg.speculation {
                    SpeculationScope::Subperiod => (first + sp).min(end),
                    SpeculationScope::FullPeriod => end,
                };
                issue = speculative_inter_period_prefetch(
                    prev,
                    first..spec_end,
                    cache,
                    req.prefix,
                    &geometry,
                    bpt,
                    cfg.tiers.mid_prefetch_buffer,
                )?;
                // Keep only what completes before identification ends.
                let window_end = head.identify.map_or(0, |i| b.finish_of(i));
                let idle = window_end.saturating_sub(b.ssd_free_at());
                let (mut lo, mut hi) = (0u32, issue.chunk_count());
                while lo < hi {
                    let mid = (lo + hi).div_ceil(2);
                    if speculative_prefix_ticks(&issue, mid, &geometry, bpt, &cfg.device)? <= idle {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                issue.truncate(lo, &geometry, bpt)?;
            }
        }
        acc.spec_loaded += logical_tokens(&geometry, &issue.loads.iter().flat_map(|l| l.chunks.clone()).collect::<Vec<_>>())?;
        let plan = plan_period(period, first..end, &identified, issue, sp, cache, req.prefix)?;
        let works = layer_works(&plan, b, &geometry, bpt, req.suffix_tokens)?;
        b.add_layers(period, &head, &works, sp);

        for lp in &plan.layers {
            acc.units_needed += identified.len() as u64;
            acc.fast_hits += lp.fast_hits.len() as u64;
            acc.mid_hits += lp.mid_hits.len() as u64;
            acc.spec_used += logical_tokens(&geometry, &lp.speculative_hits)?;
            acc.demand.merge(&unit_read_stats(&geometry, &lp.loads, bpt)?);
        }
        acc.deltas.push(plan.delta_chunks());
        for layer in first..end {
            let scores = if layer == first { scores_first.clone() } else { chunk_scores(&req.layers[layer as usize], &geometry)? };
            touch_and_admit(cache, req.prefix, layer, &identified.indices, &scores, &geometry, bpt)?;
        }
        previous = Some(identified);
        plans.push(plan);
        first = end;
        period += 1;
    }
    Ok(plans)
}

fn simulate_coarse(
    cfg: &SystemConfig,
    model: &ModelConfig,
    req: &RequestTrace,
    cache: &mut TieredCache,
    b: &mut PipelineBuilder,
    acc: &mut Counters,
) -> Result<()> {
    let n = req.layers[0].scores.len() as u32;
    let geometry = ChunkGeometry::new(n, cfg.chunk_tokens)?;
    let bpt = model.bytes_per_token();
    for layer in 0..model.num_layers {
        let scores = &req.layers[layer as usize];
        let (probe, identify) = match cfg.kind {
            PipelineKind::AsLru => (None, None),
            _ => (Some(probe_bytes(cfg, model, n)), Some(u64::from(n))),
        };
        let head = b.begin_period(layer, layer, probe, identify);
        // Needed tokens per block.
        let (blocks, per_block, selected): (Vec<u32>, Vec<u64>, u64) = if cfg.kind == PipelineKind::AsLru {
            let blocks: Vec<u32> = (0..geometry.num_chunks()).collect();
            let per = blocks.iter().map(|&j| geometry.logical_len(j).map(u64::from)).collect::<Result<_>>()?;
            (blocks, per, u64::from(n))
        } else {
            let k = budget_count(cfg.budget.budget_ratio, n);
            let as_f64: Vec<f64> = scores.scores.iter().map(|&a| f64::from(a)).collect();
            let tokens = top_k_indices(&as_f64, k as usize);
            let blocks = units_for_tokens(&geometry, &tokens)?;
            let mut per = vec![0u64; blocks.len()];
            let mut bi = 0;
            for &t in &tokens {
                while geometry.chunk_of_token(t)? != blocks[bi] {
                    bi += 1;
                }
                per[bi] += 1;
            }
            (blocks, per, u64::from(k))
        };
        let mut loads = Vec::new();
        let mut needed = 0u64;
        let mut mid = Vec::new();
        for (&j, &cnt) in blocks.iter().zip(&per_block) {
            match cache.lookup(&ChunkKey::new(req.prefix, layer, j)) {
                Residency::Fast => acc.fast_hits += 1,
                Residency::Mid => {
                    acc.mid_hits += 1;
                    mid.push(j);
                }
                Residency::Miss => {
                    loads.push(j);
                    needed += cnt;
                }
            }
        }
        acc.units_needed += blocks.len() as u64;
        let mut stats = unit_read_stats(&geometry, &loads, bpt)?;
        stats.tokens_needed = needed;
        acc.demand.merge(&stats);
        acc.deltas.push(loads.len() as u32);
        let work = LayerWork {
            layer,
            load_units: loads.clone(),
            load_bytes: stats.bytes_read,
            load_ops: stats.read_ops,
            transfer_bytes: stats.bytes_read + logical_tokens(&geometry, &mid)? * bpt,
            compute_tokens: selected + u64::from(req.suffix_tokens),
            gathered_tokens: if cfg.kind == PipelineKind::AsLru { 0 } else { selected },
            speculative_tasks: Vec::new(),
        };
        b.add_layers(layer, &head, &[work], 1);
        let block_scores = chunk_scores(scores, &geometry)?;
        touch_and_admit(cache, req.prefix, layer, &blocks, &block_scores, &geometry, bpt)?;
    }
    Ok(())
}

/// Runs one request against `cache`, mutating it in place.
pub fn simulate_request(
    cfg: &SystemConfig,
    model: &ModelConfig,
    req: &RequestTrace,
    request_idx: usize,
    cache: &mut TieredCache,
) -> Result<RequestOutcome> {
    cfg.validate(model)?;
    if req.layers.len() != model.num_layers as usize {
        return Err(Error::LengthMismatch { expected: model.num_layers as usize, actual: req.layers.len() });
    }
    if cache.policy() != cfg.policy {
        return Err(Error::InvalidConfig("cache policy does not match the system config"));
    }
    cache.begin_request();
    let mut b = PipelineBuilder::new(cfg.mode, cfg.device);
    let mut acc = Counters::default();
    let plans = if cfg.kind.is_coarse() {
        simulate_coarse(cfg, model, req, cache, &mut b, &mut acc)?;
        Vec::new()
    } else {
        simulate_chunked(cfg, model, req, cache, &mut b, &mut acc)?
    };
    let graph = b.into_graph();
    let schedule = execute(&graph)?;
    verify_schedule(&graph, &schedule)?;
    let breakdown = breakdown_report(&schedule.events)?;
    let ttft = schedule.makespan();
    debug_assert_eq!(breakdown.total(), ttft);

    let mut ssd_bytes = 0;
    let mut link_bytes = 0;
    let mut probe_bytes = 0;
    let num_periods = acc.deltas.len();
    let mut period_end = vec![0u64; num_periods];
    for (id, t) in graph.tasks.iter().enumerate() {
        match t.resource() {
            Resource::Ssd => ssd_bytes += t.bytes,
            Resource::Link => link_bytes += t.bytes,
            Resource::Gpu => {}
        }
        if t.kind == TaskKind::ProbeLoad {
            probe_bytes += t.bytes;
        }
        if t.kind == TaskKind::Compute {
            let e = &mut period_end[t.period as usize];
            *e = (*e).max(schedule.finish[id]);
        }
    }
    let mut period_latency = Vec::with_capacity(num_periods);
    let mut prev = 0;
    for &e in &period_end {
        period_latency.push(e - prev);
        prev = e;
    }
    let rate = |h: u64| if acc.units_needed == 0 { 0.0 } else { h as f64 / acc.units_needed as f64 };
    let metrics = RequestMetrics {
        system: cfg.label(),
        pass: 0,
        request: request_idx,
        prefix: req.prefix,
        ttft_ticks: ttft,
        ttft_s: cfg.device.ticks_to_seconds(ttft),
        breakdown,
        tokens_loaded_from_ssd: acc.demand.tokens_read + acc.spec_loaded,
        demand: acc.demand,
        speculative_tokens_loaded: acc.spec_loaded,
        speculative_tokens_used: acc.spec_used,
        probe_bytes,
        ssd_bytes,
        link_bytes,
        read_amplification: read_amplification(&acc.demand).ok().map(|ra| ra.ratio()),
        units_needed: acc.units_needed,
        fast_hits: acc.fast_hits,
        mid_hits: acc.mid_hits,
        fast_hit_rate: rate(acc.fast_hits),
        mid_hit_rate: rate(acc.mid_hits),
        period_delta_chunks: acc.deltas,
        period_latency_ticks: period_latency,
    };
    Ok(RequestOutcome { metrics, plans, graph, schedule })
}

/// Nearest-rank percentile: the smallest value with at least `p` of the
/// samples at or below it.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig("percentile must be in (0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(p * sorted.len() as f64 - 1e-9).max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub seed: u64,
    pub similarity: f64,
    pub prefix_len: u32,
    pub num_layers: u32,
    pub requests: usize,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub label: String,
    pub config: SystemConfig,
    pub requests: usize,
    pub mean_ttft_s: f64,
    pub p95_ttft_s: f64,
    pub mean_read_amplification: Option<f64>,
    pub tokens_loaded_from_ssd: u64,
    /// Relative to impress_like when it is part of the run.
    pub normalized_tokens_loaded: Option<f64>,
    pub fast_hit_rate: f64,
    pub mid_hit_rate: f64,
    pub stage_shares: StageShares,
    pub speedup_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub percentile_method: String,
    pub tick_ns: u64,
    pub trace: TraceInfo,
    pub order: Vec<usize>,
    pub repetitions: u32,
    pub warmup: bool,
    pub baseline: Option<String>,
    pub systems: Vec<SystemSummary>,
    pub rows: Vec<RequestMetrics>,
}

impl Report {
    /// Recomputes speedups (`baseline mean TTFT / system mean TTFT`).
    pub fn set_baseline(&mut self, label: &str) -> Result<()> {
        let base = self.systems.iter().find(|s| s.label == label).ok_or_else(|| Error::UnknownPipeline(label.to_string()))?.mean_ttft_s;
        for s in &mut self.systems {
            s.speedup_vs_baseline = Some(base / s.mean_ttft_s);
        }
        self.baseline = Some(label.to_string());
        Ok(())
    }

    pub fn system(&self, label: &str) -> Option<&SystemSummary> {
        self.systems.iter().find(|s| s.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Request indices in service order; all requests once when empty.
    pub order: Vec<usize>,
    pub repetitions: u32,
    pub warmup: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { order: Vec::new(), repetitions: 1, warmup: true }
    }
}

/// Runs every config over the trace with its own cache: an optional warm-up
/// pass over `order`, then `repetitions` measured passes.
pub fn run_experiment(configs: &[SystemConfig], trace: &AttentionTrace, opts: &ExperimentOptions) -> Result<Report> {
    if configs.is_empty() {
        return Err(Error::Empty("system configs"));
    }
    if opts.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1"));
    }
    let model = &trace.manifest.model;
    let order: Vec<usize> = if opts.order.is_empty() { (0..trace.requests.len()).collect() } else { opts.order.clone() };
    let mut rows = Vec::new();
    let mut systems = Vec::new();
    for cfg in configs {
        let mut cache = cfg.new_cache()?;
        if opts.warmup {
            for &i in &order {
                simulate_request(cfg, model, trace.request(i)?, i, &mut cache)?;
            }
        }
        let mut mine = Vec::new();
        for pass in 0..opts.repetitions {
            for &i in &order {
                let mut m = simulate_request(cfg, model, trace.request(i)?, i, &mut cache)?.metrics;
                m.pass = pass;
                mine.push(m);
            }
        }
        systems.push(summarize(cfg, &mine)?);
        rows.extend(mine);
    }
    let impress = systems.iter().find(|s| s.config.kind == PipelineKind::ImpressLike).map(|s| s.tokens_loaded_from_ssd);
    if let Some(base) = impress {
        for s in &mut systems {
            s.normalized_tokens_loaded = match (base, s.tokens_loaded_from_ssd) {
                (0, 0) => Some(1.0),
                (0, _) => None,
                (b, t) => Some(t as f64 / b as f64),
            };
        }
    }
    let mut report = Report {
        format_version: REPORT_FORMAT_VERSION,
        percentile_method: "nearest-rank".to_string(),
        tick_ns: configs[0].device.tick_ns,
        trace: TraceInfo {
            seed: trace.manifest.generator.seed,
            similarity: trace.manifest.generator.similarity,
            prefix_len: trace.manifest.geometry.prefix_len(),
            num_layers: model.num_layers,
            requests: trace.requests.len(),
            model: *model,
        },
        order,
        repetitions: opts.repetitions,
        warmup: opts.warmup,
        baseline: None,
        systems,
        rows,
    };
    if let Some(label) = report.systems.iter().find(|s| s.config.kind == PipelineKind::ImpressLike).map(|s| s.label.clone()) {
        report.set_baseline(&label)?;
    }
    Ok(report)
}

fn summarize(cfg: &SystemConfig, rows: &[RequestMetrics]) -> Result<SystemSummary> {
    let ttfts: Vec<f64> = rows.iter().map(|r| r.ttft_s).collect();
    let ras: Vec<f64> = rows.iter().filter_map(|r| r.read_amplification).collect();
    let mut total = StageBreakdown::default();
    let (mut needed, mut fast, mut mid) = (0u64, 0u64, 0u64);
    for r in rows {
        total.merge(&r.breakdown);
        needed += r.units_needed;
        fast += r.fast_hits;
        mid += r.mid_hits;
    }
    let rate = |h: u64| if needed == 0 { 0.0 } else { h as f64 / needed as f64 };
    Ok(SystemSummary {
        label: cfg.label(),
        config: *cfg,
        requests: rows.len(),
        mean_ttft_s: ttfts.iter().sum::<f64>() / ttfts.len() as f64,
        p95_ttft_s: percentile(&ttfts, 0.95)?,
        mean_read_amplification: (!ras.is_empty()).then(|| ras.iter().sum::<f64>() / ras.len() as f64),
        tokens_loaded_from_ssd: rows.iter().map(|r| r.tokens_loaded_from_ssd).sum(),
        normalized_tokens_loaded: None,
        fast_hit_rate: rate(fast),
        mid_hit_rate: rate(mid),
        stage_shares: total.shares(),
        speedup_vs_baseline: None,
    })
}

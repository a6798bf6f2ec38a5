//! Replays a simulated request's task graph against real store files.
//!
//! One worker thread per resource walks that resource's tasks in issue order.
//! SSD tasks perform the actual reads; link and compute tasks sleep for their
//! modeled duration times `time_scale`. Every start and end is appended to a
//! single mutex-guarded log, and all counters are derived from that log.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use ckv_core::model::PrefixId;
use ckv_core::pipeline::{breakdown_report, EventKind, PipelineEvent, Resource, StageBreakdown, TaskGraph, TaskKind};
use ckv_core::sim::{simulate_request, RequestMetrics, SystemConfig};
use ckv_core::workload::AttentionTrace;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ReadKind, StoreHandle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealIoOptions {
    /// Multiplier on modeled link and compute durations; 0 skips sleeping.
    pub time_scale: f64,
}

impl Default for RealIoOptions {
    fn default() -> Self {
        Self { time_scale: 1.0 }
    }
}

/// Byte and token counters, comparable with [`RequestMetrics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IoCounters {
    pub probe_bytes: u64,
    pub ssd_bytes: u64,
    pub link_bytes: u64,
    pub tokens_loaded_from_ssd: u64,
    pub speculative_tokens_loaded: u64,
}

impl IoCounters {
    pub fn from_metrics(m: &RequestMetrics) -> Self {
        Self {
            probe_bytes: m.probe_bytes,
            ssd_bytes: m.ssd_bytes,
            link_bytes: m.link_bytes,
            tokens_loaded_from_ssd: m.tokens_loaded_from_ssd,
            speculative_tokens_loaded: m.speculative_tokens_loaded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    /// Timestamps in nanoseconds since the replay started.
    pub events: Vec<PipelineEvent>,
    pub wall_ns: u64,
    pub counters: IoCounters,
    /// Stage attribution of the wall-clock log, in nanoseconds.
    pub breakdown: StageBreakdown,
}

struct Shared {
    done: Vec<bool>,
    failed: Option<Error>,
}

struct LogEntry {
    event: PipelineEvent,
    tokens: u64,
}

/// Executes `graph` with real reads from `store`.
pub fn replay(graph: &TaskGraph, store: &StoreHandle, opts: &RealIoOptions, tick_ns: u64) -> Result<ReplayOutcome> {
    graph.validate()?;
    let chains = graph.resource_chains();
    let state = Mutex::new(Shared { done: vec![false; graph.len()], failed: None });
    let cv = Condvar::new();
    let log: Mutex<Vec<LogEntry>> = Mutex::new(Vec::with_capacity(graph.len() * 2));
    let t0 = Instant::now();

    // The timestamp is taken under the log lock so log order is time order.
    let record = |id: usize, start: bool, bytes: u64, tokens: u64| {
        let t = &graph.tasks[id];
        let mut l = log.lock().expect("log lock");
        let mut ts = t0.elapsed().as_nanos() as u64;
        if let Some(prev) = l.last() {
            ts = ts.max(prev.event.ts);
        }
        if !start {
            if let Some(s) = l.iter().rev().find(|e| e.event.task == id) {
                ts = ts.max(s.event.ts + 1);
            }
        }
        l.push(LogEntry {
            event: PipelineEvent {
                ts,
                kind: EventKind::of(t.kind, start),
                layer: t.layer,
                period: t.period,
                bytes,
                task: id,
                resource: t.resource(),
            },
            tokens,
        });
    };

    let run_task = |id: usize| -> Result<(u64, u64)> {
        let t = &graph.tasks[id];
        match t.kind {
            TaskKind::ProbeLoad => Ok((store.read_key_prefix(t.layer, t.bytes)?.len() as u64, 0)),
            TaskKind::KvLoad | TaskKind::SpeculativeLoad => {
                let (payload, stats) = store.read_chunks(t.layer, &t.units, ReadKind::KeysAndValues)?;
                let bytes: usize = payload.iter().map(|p| p.keys.len() + p.values.len()).sum();
                Ok((bytes as u64, stats.tokens_read))
            }
            TaskKind::ProbeTransfer | TaskKind::KvTransfer | TaskKind::Identify | TaskKind::Compute => {
                let ns = t.duration as f64 * tick_ns as f64 * opts.time_scale;
                if ns > 0.0 {
                    std::thread::sleep(Duration::from_nanos(ns as u64));
                }
                Ok((t.bytes, 0))
            }
        }
    };

    let worker = |r: Resource| {
        for &id in &chains[r.idx()] {
            {
                let mut s = state.lock().expect("state lock");
                while s.failed.is_none() && !graph.tasks[id].deps.iter().all(|&d| s.done[d]) {
                    s = cv.wait(s).expect("state lock");
                }
                if s.failed.is_some() {
                    return;
                }
            }
            record(id, true, graph.tasks[id].bytes, 0);
            let result = run_task(id);
            let mut s = state.lock().expect("state lock");
            match result {
                Ok((bytes, tokens)) => {
                    record(id, false, bytes, tokens);
                    s.done[id] = true;
                }
                Err(e) => {
                    s.failed.get_or_insert(e);
                }
            }
            cv.notify_all();
        }
    };

    std::thread::scope(|scope| {
        for r in Resource::ALL {
            let w = &worker;
            scope.spawn(move || w(r));
        }
    });
    let wall_ns = t0.elapsed().as_nanos() as u64;
    if let Some(e) = state.into_inner().expect("state lock").failed {
        return Err(e);
    }

    let entries = log.into_inner().expect("log lock");
    let mut c = IoCounters::default();
    for e in entries.iter().filter(|e| !e.event.kind.is_start()) {
        let kind = graph.tasks[e.event.task].kind;
        match kind {
            TaskKind::ProbeLoad => c.probe_bytes += e.event.bytes,
            TaskKind::KvLoad => c.tokens_loaded_from_ssd += e.tokens,
            TaskKind::SpeculativeLoad => {
                c.tokens_loaded_from_ssd += e.tokens;
                c.speculative_tokens_loaded += e.tokens;
            }
            _ => {}
        }
        match kind.resource() {
            Resource::Ssd => c.ssd_bytes += e.event.bytes,
            Resource::Link => c.link_bytes += e.event.bytes,
            Resource::Gpu => {}
        }
    }
    let events: Vec<PipelineEvent> = entries.into_iter().map(|e| e.event).collect();
    let breakdown = breakdown_report(&events)?;
    Ok(ReplayOutcome { events, wall_ns, counters: c, breakdown })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealIoRow {
    pub system: String,
    pub request: usize,
    pub prefix: u64,
    pub sim_ttft_s: f64,
    pub wall_ttft_s: f64,
    pub probe_bytes: u64,
    pub ssd_bytes: u64,
    pub link_bytes: u64,
    pub tokens_loaded_from_ssd: u64,
    pub wall_critical_kv_load_share: f64,
}

/// Simulates each request to get its plan, replays it against the stores and
/// checks the counters agree. The warm-up pass, when requested, is simulated
/// only.
pub fn run_real_io(
    cfg: &SystemConfig,
    trace: &AttentionTrace,
    stores: &BTreeMap<PrefixId, StoreHandle>,
    order: &[usize],
    warmup: bool,
    opts: &RealIoOptions,
) -> Result<Vec<RealIoRow>> {
    let model = &trace.manifest.model;
    let mut cache = cfg.new_cache()?;
    if warmup {
        for &i in order {
            simulate_request(cfg, model, trace.request(i)?, i, &mut cache)?;
        }
    }
    let mut rows = Vec::with_capacity(order.len());
    for &i in order {
        let req = trace.request(i)?;
        let store = stores.get(&req.prefix).ok_or_else(|| Error::MissingStore(format!("prefix {}", req.prefix.0)))?;
        if store.manifest().unit_tokens() != cfg.chunk_tokens {
            return Err(Error::LayoutMismatch(format!(
                "{} expects {}-token units, store has {}",
                cfg.label(),
                cfg.chunk_tokens,
                store.manifest().unit_tokens()
            )));
        }
        let out = simulate_request(cfg, model, req, i, &mut cache)?;
        let replayed = replay(&out.graph, store, opts, cfg.device.tick_ns)?;
        let want = IoCounters::from_metrics(&out.metrics);
        if replayed.counters != want {
            return Err(Error::CounterMismatch(format!("request {i}: sim {want:?}, real {:?}", replayed.counters)));
        }
        rows.push(RealIoRow {
            system: cfg.label(),
            request: i,
            prefix: req.prefix.0,
            sim_ttft_s: out.metrics.ttft_s,
            wall_ttft_s: replayed.wall_ns as f64 * 1e-9,
            probe_bytes: replayed.counters.probe_bytes,
            ssd_bytes: replayed.counters.ssd_bytes,
            link_bytes: replayed.counters.link_bytes,
            tokens_loaded_from_ssd: replayed.counters.tokens_loaded_from_ssd,
            wall_critical_kv_load_share: replayed.breakdown.shares().critical_kv_load,
        });
    }
    Ok(rows)
}

//! Period planning, speculative prefetch and the pipelined schedule.
//!
//! A request is lowered to a [`TaskGraph`]: every task runs on one of three
//! resources (SSD, host link, accelerator), each resource serves its tasks in
//! the order they were added, and explicit dependencies encode the data flow.
//! [`execute`] runs the graph as a discrete-event loop and emits a totally
//! ordered event log.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cache::{Residency, TieredCache};
use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::importance::CriticalSet;
use crate::io::coalesce_runs;
use crate::model::{ChunkGeometry, ChunkKey, PrefixId};

pub type TaskId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Ssd,
    Link,
    Gpu,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Ssd, Resource::Link, Resource::Gpu];

    pub fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ProbeLoad,
    ProbeTransfer,
    Identify,
    KvLoad,
    KvTransfer,
    SpeculativeLoad,
    Compute,
}

impl TaskKind {
    pub fn resource(self) -> Resource {
        match self {
            TaskKind::ProbeLoad | TaskKind::KvLoad | TaskKind::SpeculativeLoad => Resource::Ssd,
            TaskKind::ProbeTransfer | TaskKind::KvTransfer => Resource::Link,
            TaskKind::Identify | TaskKind::Compute => Resource::Gpu,
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            TaskKind::ProbeLoad | TaskKind::ProbeTransfer => Stage::ProbeLoad,
            TaskKind::Identify => Stage::Identify,
            TaskKind::KvLoad | TaskKind::KvTransfer | TaskKind::SpeculativeLoad => Stage::CriticalKvLoad,
            TaskKind::Compute => Stage::Compute,
        }
    }

    /// Whether an SSD task reads only key vectors.
    pub fn reads_keys_only(self) -> bool {
        self == TaskKind::ProbeLoad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ProbeLoad,
    Identify,
    CriticalKvLoad,
    Compute,
    Other,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::ProbeLoad, Stage::Identify, Stage::CriticalKvLoad, Stage::Compute, Stage::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ProbeLoad => "probe_load",
            Stage::Identify => "identify",
            Stage::CriticalKvLoad => "critical_kv_load",
            Stage::Compute => "compute",
            Stage::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub period: u32,
    pub layer: u32,
    pub bytes: u64,
    pub ops: u64,
    pub duration: u64,
    pub deps: Vec<TaskId>,
    /// Storage units (chunks or blocks) read by an SSD task; empty for probes,
    /// which read the whole key region of `layer`.
    pub units: Vec<u32>,
}

impl Task {
    pub fn resource(&self) -> Resource {
        self.kind.resource()
    }
}

/// Tasks in issue order. Every dependency points to an earlier task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
}

impl TaskGraph {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task ids per resource, in service order.
    pub fn resource_chains(&self) -> [Vec<TaskId>; 3] {
        let mut chains: [Vec<TaskId>; 3] = Default::default();
        for (id, t) in self.tasks.iter().enumerate() {
            chains[t.resource().idx()].push(id);
        }
        chains
    }

    pub fn validate(&self) -> Result<()> {
        for (id, t) in self.tasks.iter().enumerate() {
            if t.deps.iter().any(|&d| d >= id) {
                return Err(Error::InvalidConfig("task dependencies must refer to earlier tasks"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProbeLoadStart,
    ProbeLoadEnd,
    IdentifyStart,
    IdentifyEnd,
    KvLoadStart,
    KvLoadEnd,
    ComputeStart,
    ComputeEnd,
    SpeculativePrefetchStart,
    SpeculativePrefetchEnd,
}

impl EventKind {
    pub fn of(kind: TaskKind, start: bool) -> Self {
        use EventKind::*;
        match (kind, start) {
            (TaskKind::ProbeLoad | TaskKind::ProbeTransfer, true) => ProbeLoadStart,
            (TaskKind::ProbeLoad | TaskKind::ProbeTransfer, false) => ProbeLoadEnd,
            (TaskKind::Identify, true) => IdentifyStart,
            (TaskKind::Identify, false) => IdentifyEnd,
            (TaskKind::KvLoad | TaskKind::KvTransfer, true) => KvLoadStart,
            (TaskKind::KvLoad | TaskKind::KvTransfer, false) => KvLoadEnd,
            (TaskKind::Compute, true) => ComputeStart,
            (TaskKind::Compute, false) => ComputeEnd,
            (TaskKind::SpeculativeLoad, true) => SpeculativePrefetchStart,
            (TaskKind::SpeculativeLoad, false) => SpeculativePrefetchEnd,
        }
    }

    pub fn is_start(self) -> bool {
        use EventKind::*;
        matches!(self, ProbeLoadStart | IdentifyStart | KvLoadStart | ComputeStart | SpeculativePrefetchStart)
    }

    pub fn stage(self) -> Stage {
        use EventKind::*;
        match self {
            ProbeLoadStart | ProbeLoadEnd => Stage::ProbeLoad,
            IdentifyStart | IdentifyEnd => Stage::Identify,
            KvLoadStart | KvLoadEnd | SpeculativePrefetchStart | SpeculativePrefetchEnd => Stage::CriticalKvLoad,
            ComputeStart | ComputeEnd => Stage::Compute,
        }
    }
}

/// One line of the event log. The log order is the total order: timestamps
/// never decrease and ties keep emission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub ts: u64,
    pub kind: EventKind,
    pub layer: u32,
    pub period: u32,
    pub bytes: u64,
    pub task: TaskId,
    pub resource: Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: Vec<u64>,
    pub finish: Vec<u64>,
    /// Zero-length tasks are scheduled but emit no events.
    pub events: Vec<PipelineEvent>,
}

impl Schedule {
    pub fn makespan(&self) -> u64 {
        self.finish.iter().copied().max().unwrap_or(0)
    }
}

/// Discrete-event execution: a task starts as soon as its resource has
/// finished every earlier task and all of its dependencies are done.
pub fn execute(graph: &TaskGraph) -> Result<Schedule> {
    graph.validate()?;
    let n = graph.len();
    let chains = graph.resource_chains();
    let mut remaining: Vec<usize> = graph.tasks.iter().map(|t| t.deps.len()).collect();
    let mut dependents: Vec<Vec<TaskId>> = vec![Vec::new(); n];
    for (id, t) in graph.tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(id);
        }
    }
    let mut start = vec![u64::MAX; n];
    let mut finish = vec![u64::MAX; n];
    let mut next = [0usize; 3];
    let mut busy = [false; 3];
    let mut pending: BinaryHeap<Reverse<(u64, u64, TaskId)>> = BinaryHeap::new();
    let mut events = Vec::new();
    let mut seq = 0u64;
    let mut now = 0u64;
    let mut done = 0usize;

    let emit = |events: &mut Vec<PipelineEvent>, ts: u64, id: TaskId, is_start: bool| {
        let t = &graph.tasks[id];
        if t.duration > 0 {
            events.push(PipelineEvent {
                ts,
                kind: EventKind::of(t.kind, is_start),
                layer: t.layer,
                period: t.period,
                bytes: t.bytes,
                task: id,
                resource: t.resource(),
            });
        }
    };

    loop {
        for r in 0..3 {
            if busy[r] {
                continue;
            }
            if let Some(&id) = chains[r].get(next[r]) {
                if remaining[id] == 0 {
                    busy[r] = true;
                    next[r] += 1;
                    start[id] = now;
                    emit(&mut events, now, id, true);
                    pending.push(Reverse((now + graph.tasks[id].duration, seq, id)));
                    seq += 1;
                }
            }
        }
        let Some(Reverse((t, _, id))) = pending.pop() else {
            break;
        };
        now = t;
        finish[id] = t;
        done += 1;
        emit(&mut events, t, id, false);
        busy[graph.tasks[id].resource().idx()] = false;
        for &d in &dependents[id] {
            remaining[d] -= 1;
        }
    }
    if done != n {
        return Err(Error::InvalidConfig("task graph deadlocked"));
    }
    Ok(Schedule { start, finish, events })
}

/// Mechanical soundness check of a schedule against its graph.
pub fn verify_schedule(graph: &TaskGraph, schedule: &Schedule) -> Result<()> {
    let n = graph.len();
    if schedule.start.len() != n || schedule.finish.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: schedule.start.len() });
    }
    for (id, t) in graph.tasks.iter().enumerate() {
        if schedule.finish[id] != schedule.start[id] + t.duration {
            return Err(Error::MalformedLog("task duration not respected"));
        }
        if t.deps.iter().any(|&d| schedule.finish[d] > schedule.start[id]) {
            return Err(Error::MalformedLog("task started before a dependency finished"));
        }
    }
    for chain in graph.resource_chains() {
        for w in chain.windows(2) {
            if schedule.start[w[1]] < schedule.finish[w[0]] {
                return Err(Error::MalformedLog("resource served two tasks at once"));
            }
        }
    }
    if schedule.events.windows(2).any(|w| w[0].ts > w[1].ts) {
        return Err(Error::MalformedLog("events out of order"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// Every task waits for the previous one.
    Serial,
    /// Layer-by-layer: KV for layer `l` is requested once layer `l - 1` has
    /// computed. Probe reads may still run ahead on the SSD.
    NoPrefetch,
    /// All loads of a period are issued right after identification.
    Intra,
    /// `Intra` plus speculative loads of the previous set for the next period.
    #[default]
    IntraInter,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Serial => "serial",
            PipelineMode::NoPrefetch => "no_prefetch",
            PipelineMode::Intra => "intra",
            PipelineMode::IntraInter => "intra_inter",
        }
    }
}

/// Work of one layer once its loads are known.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerWork {
    pub layer: u32,
    pub load_units: Vec<u32>,
    pub load_bytes: u64,
    pub load_ops: u64,
    /// Bytes moved host-to-accelerator: demand loads, confirmed speculative
    /// chunks and mid-tier hits.
    pub transfer_bytes: u64,
    pub compute_tokens: u64,
    pub gathered_tokens: u64,
    /// Speculative load tasks whose data this layer consumes.
    pub speculative_tasks: Vec<TaskId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodHead {
    pub probe: Option<TaskId>,
    pub probe_transfer: Option<TaskId>,
    pub identify: Option<TaskId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeriodTasks {
    pub loads: Vec<Option<TaskId>>,
    pub transfers: Vec<Option<TaskId>>,
    pub computes: Vec<TaskId>,
}

/// Builds a [`TaskGraph`] while tracking the as-soon-as-possible schedule so
/// callers can size speculative work against predicted idle time.
#[derive(Debug, Clone)]
pub struct PipelineBuilder {
    mode: PipelineMode,
    device: DeviceModel,
    graph: TaskGraph,
    finish: Vec<u64>,
    resource_free: [u64; 3],
}

impl PipelineBuilder {
    pub fn new(mode: PipelineMode, device: DeviceModel) -> Self {
        Self { mode, device, graph: TaskGraph::default(), finish: Vec::new(), resource_free: [0; 3] }
    }

    pub fn mode(&self) -> PipelineMode {
        self.mode
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn into_graph(self) -> TaskGraph {
        self.graph
    }

    /// Predicted finish tick of `id`.
    pub fn finish_of(&self, id: TaskId) -> u64 {
        self.finish[id]
    }

    /// Tick at which the SSD finishes everything issued so far.
    pub fn ssd_free_at(&self) -> u64 {
        self.resource_free[Resource::Ssd.idx()]
    }

    #[allow(clippy::too_many_arguments)]
    fn add(&mut self, kind: TaskKind, period: u32, layer: u32, mut deps: Vec<TaskId>, units: Vec<u32>, bytes: u64, ops: u64) -> TaskId {
        let duration = match kind.resource() {
            Resource::Ssd => self.device.ssd_ticks(bytes, ops),
            Resource::Link => self.device.link_ticks(bytes),
            Resource::Gpu => 0,
        };
        self.push(Task { kind, period, layer, bytes, ops, duration, deps: Vec::new(), units }, &mut deps)
    }

    fn push(&mut self, mut task: Task, deps: &mut Vec<TaskId>) -> TaskId {
        let id = self.graph.len();
        if self.mode == PipelineMode::Serial && id > 0 {
            deps.push(id - 1);
        }
        deps.sort_unstable();
        deps.dedup();
        task.deps = core::mem::take(deps);
        let r = task.resource().idx();
        let ready = task.deps.iter().map(|&d| self.finish[d]).max().unwrap_or(0);
        let end = ready.max(self.resource_free[r]) + task.duration;
        self.resource_free[r] = end;
        self.finish.push(end);
        self.graph.tasks.push(task);
        id
    }

    fn add_gpu(&mut self, kind: TaskKind, period: u32, layer: u32, mut deps: Vec<TaskId>, duration: u64) -> TaskId {
        let task = Task { kind, period, layer, bytes: 0, ops: 0, duration, deps: Vec::new(), units: Vec::new() };
        self.push(task, &mut deps)
    }

    /// Probe read and transfer of key vectors, then identification.
    pub fn begin_period(&mut self, period: u32, first_layer: u32, probe_bytes: Option<u64>, identify_tokens: Option<u64>) -> PeriodHead {
        let mut head = PeriodHead { probe: None, probe_transfer: None, identify: None };
        if let Some(bytes) = probe_bytes.filter(|&b| b > 0) {
            let p = self.add(TaskKind::ProbeLoad, period, first_layer, Vec::new(), Vec::new(), bytes, 1);
            let x = self.add(TaskKind::ProbeTransfer, period, first_layer, vec![p], Vec::new(), bytes, 0);
            head.probe = Some(p);
            head.probe_transfer = Some(x);
        }
        if let Some(tokens) = identify_tokens {
            let d = self.device.identify_ticks(tokens);
            let deps = head.probe_transfer.into_iter().collect();
            head.identify = Some(self.add_gpu(TaskKind::Identify, period, first_layer, deps, d));
        }
        head
    }

    /// SSD-only read into the host-side prefetch buffer.
    pub fn add_speculative(&mut self, period: u32, layer: u32, units: Vec<u32>, bytes: u64, after: Option<TaskId>) -> TaskId {
        let ops = coalesce_runs(&units).len() as u64;
        self.add(TaskKind::SpeculativeLoad, period, layer, after.into_iter().collect(), units, bytes, ops)
    }

    /// SSD ticks for a speculative load of `bytes` in `ops` runs.
    pub fn speculative_ticks(&self, bytes: u64, ops: u64) -> u64 {
        self.device.ssd_ticks(bytes, ops)
    }

    /// Adds loads, transfers and computes for the layers of a period.
    /// `subperiod` layers must have their KV on the accelerator before the
    /// first compute of the period starts (ignored by layer-by-layer modes).
    pub fn add_layers(&mut self, period: u32, head: &PeriodHead, layers: &[LayerWork], subperiod: u32) -> PeriodTasks {
        let identify: Vec<TaskId> = head.identify.into_iter().collect();
        let mut out = PeriodTasks::default();
        let layer_by_layer = matches!(self.mode, PipelineMode::Serial | PipelineMode::NoPrefetch);
        let mut prev_compute: Option<TaskId> = None;

        let load_and_transfer = |b: &mut Self, w: &LayerWork, prev: Option<TaskId>| {
            let load = (w.load_bytes > 0).then(|| {
                let mut deps = identify.clone();
                deps.extend(prev);
                b.add(TaskKind::KvLoad, period, w.layer, deps, w.load_units.clone(), w.load_bytes, w.load_ops)
            });
            let transfer = (w.transfer_bytes > 0).then(|| {
                let mut deps = identify.clone();
                deps.extend(load);
                deps.extend(w.speculative_tasks.iter().copied());
                b.add(TaskKind::KvTransfer, period, w.layer, deps, Vec::new(), w.transfer_bytes, 0)
            });
            (load, transfer)
        };

        let gate = (subperiod as usize).clamp(1, layers.len().max(1));
        if layer_by_layer {
            // The gated layers load up front; the rest wait for the previous compute.
            for w in layers.iter().take(gate) {
                let (load, transfer) = load_and_transfer(self, w, None);
                out.loads.push(load);
                out.transfers.push(transfer);
            }
            for (i, w) in layers.iter().enumerate() {
                if i >= gate {
                    let (load, transfer) = load_and_transfer(self, w, prev_compute);
                    out.loads.push(load);
                    out.transfers.push(transfer);
                }
                let mut deps = identify.clone();
                if i == 0 {
                    deps.extend(out.transfers[..gate.min(out.transfers.len())].iter().flatten());
                } else {
                    deps.extend(out.transfers[i]);
                }
                let d = self.device.compute_ticks(w.compute_tokens, w.gathered_tokens);
                let c = self.add_gpu(TaskKind::Compute, period, w.layer, deps, d);
                out.computes.push(c);
                prev_compute = Some(c);
            }
        } else {
            for w in layers {
                let (load, transfer) = load_and_transfer(self, w, None);
                out.loads.push(load);
                out.transfers.push(transfer);
            }
            for (i, w) in layers.iter().enumerate() {
                let mut deps = identify.clone();
                if i == 0 {
                    deps.extend(out.transfers[..gate.min(out.transfers.len())].iter().flatten());
                } else {
                    deps.extend(out.transfers[i]);
                }
                let d = self.device.compute_ticks(w.compute_tokens, w.gathered_tokens);
                out.computes.push(self.add_gpu(TaskKind::Compute, period, w.layer, deps, d));
            }
        }
        out
    }
}

/// Chunks read speculatively for one upcoming layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculativeLoad {
    pub layer: u32,
    pub chunks: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeculativeIssue {
    pub loads: Vec<SpeculativeLoad>,
    pub bytes: u64,
    /// Candidates dropped because they did not fit the budget.
    pub truncated: u32,
}

impl SpeculativeIssue {
    pub fn chunk_count(&self) -> u32 {
        self.loads.iter().map(|l| l.chunks.len() as u32).sum()
    }

    /// Keeps the first `keep` chunks in issue order.
    pub fn truncate(&mut self, keep: u32, geometry: &ChunkGeometry, bytes_per_token: u64) -> Result<()> {
        let mut left = keep;
        let mut dropped = 0u32;
        let mut bytes = 0u64;
        for load in &mut self.loads {
            let n = (load.chunks.len() as u32).min(left);
            dropped += load.chunks.len() as u32 - n;
            load.chunks.truncate(n as usize);
            left -= n;
            for &j in &load.chunks {
                bytes += u64::from(geometry.logical_len(j)?) * bytes_per_token;
            }
        }
        self.loads.retain(|l| !l.chunks.is_empty());
        self.truncated += dropped;
        self.bytes = bytes;
        Ok(())
    }

    pub fn contains(&self, layer: u32, chunk: u32) -> bool {
        self.loads.iter().any(|l| l.layer == layer && l.chunks.binary_search(&chunk).is_ok())
    }
}

/// Loads for the previous period's critical chunks on `layers`, skipping
/// resident chunks, in ascending layer then chunk order until
/// `buffer_budget` bytes would be exceeded. The cache is not modified.
pub fn speculative_inter_period_prefetch(
    previous: &CriticalSet,
    layers: Range<u32>,
    cache: &TieredCache,
    prefix: PrefixId,
    geometry: &ChunkGeometry,
    bytes_per_token: u64,
    buffer_budget: u64,
) -> Result<SpeculativeIssue> {
    let mut issue = SpeculativeIssue::default();
    let mut full = false;
    for layer in layers {
        let mut chunks = Vec::new();
        for &j in &previous.indices {
            if cache.lookup(&ChunkKey::new(prefix, layer, j)) != Residency::Miss {
                continue;
            }
            let size = u64::from(geometry.logical_len(j)?) * bytes_per_token;
            if full || issue.bytes + size > buffer_budget {
                full = true;
                issue.truncated += 1;
                continue;
            }
            issue.bytes += size;
            chunks.push(j);
        }
        if !chunks.is_empty() {
            issue.loads.push(SpeculativeLoad { layer, chunks });
        }
    }
    Ok(issue)
}

/// How one layer's identified chunks will be served.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: u32,
    pub fast_hits: Vec<u32>,
    pub mid_hits: Vec<u32>,
    pub speculative_hits: Vec<u32>,
    /// Demand loads from the SSD: the delta.
    pub loads: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPlan {
    pub period: u32,
    pub first_layer: u32,
    pub last_layer: u32,
    pub identified: CriticalSet,
    pub speculative: SpeculativeIssue,
    pub layers: Vec<LayerPlan>,
    pub subperiod: u32,
}

impl PeriodPlan {
    pub fn delta_chunks(&self) -> u32 {
        self.layers.iter().map(|l| l.loads.len() as u32).sum()
    }

    /// Speculatively loaded chunks that were not identified.
    pub fn wasted_speculative(&self) -> u32 {
        self.speculative.chunk_count() - self.layers.iter().map(|l| l.speculative_hits.len() as u32).sum::<u32>()
    }
}

/// Splits each layer's identified chunks into cache hits, confirmed
/// speculative loads and the remaining delta that must be read.
pub fn plan_period(
    period: u32,
    layers: Range<u32>,
    identified: &CriticalSet,
    speculative: SpeculativeIssue,
    subperiod: u32,
    cache: &TieredCache,
    prefix: PrefixId,
) -> Result<PeriodPlan> {
    if layers.is_empty() {
        return Err(Error::Empty("period layers"));
    }
    let spec: BTreeSet<(u32, u32)> = speculative.loads.iter().flat_map(|l| l.chunks.iter().map(move |&j| (l.layer, j))).collect();
    let mut plans = Vec::with_capacity(layers.len());
    for layer in layers.clone() {
        let mut lp = LayerPlan { layer, ..Default::default() };
        for &j in &identified.indices {
            if spec.contains(&(layer, j)) {
                lp.speculative_hits.push(j);
                continue;
            }
            match cache.lookup(&ChunkKey::new(prefix, layer, j)) {
                Residency::Fast => lp.fast_hits.push(j),
                Residency::Mid => lp.mid_hits.push(j),
                Residency::Miss => lp.loads.push(j),
            }
        }
        plans.push(lp);
    }
    Ok(PeriodPlan {
        period,
        first_layer: layers.start,
        last_layer: layers.end - 1,
        identified: identified.clone(),
        speculative,
        layers: plans,
        subperiod,
    })
}

/// Stage totals along the critical path, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub probe_load: u64,
    pub identify: u64,
    pub critical_kv_load: u64,
    pub compute: u64,
    pub other: u64,
}

impl StageBreakdown {
    pub fn total(&self) -> u64 {
        self.probe_load + self.identify + self.critical_kv_load + self.compute + self.other
    }

    pub fn get(&self, stage: Stage) -> u64 {
        match stage {
            Stage::ProbeLoad => self.probe_load,
            Stage::Identify => self.identify,
            Stage::CriticalKvLoad => self.critical_kv_load,
            Stage::Compute => self.compute,
            Stage::Other => self.other,
        }
    }

    fn add(&mut self, stage: Stage, ticks: u64) {
        match stage {
            Stage::ProbeLoad => self.probe_load += ticks,
            Stage::Identify => self.identify += ticks,
            Stage::CriticalKvLoad => self.critical_kv_load += ticks,
            Stage::Compute => self.compute += ticks,
            Stage::Other => self.other += ticks,
        }
    }

    pub fn merge(&mut self, o: &StageBreakdown) {
        for s in Stage::ALL {
            self.add(s, o.get(s));
        }
    }

    /// Fractions of the total; all zero for an empty breakdown.
    pub fn shares(&self) -> StageShares {
        let t = self.total();
        let f = |v: u64| if t == 0 { 0.0 } else { v as f64 / t as f64 };
        StageShares {
            probe_load: f(self.probe_load),
            identify: f(self.identify),
            critical_kv_load: f(self.critical_kv_load),
            compute: f(self.compute),
            other: f(self.other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageShares {
    pub probe_load: f64,
    pub identify: f64,
    pub critical_kv_load: f64,
    pub compute: f64,
    pub other: f64,
}

/// Attributes the critical path of an event log to stages.
///
/// Walks back from the last end event; at each point picks an interval that
/// ends exactly there (the longest, then the lowest task id). Time not covered
/// by any interval is `other`, so the stages sum to the makespan exactly.
pub fn breakdown_report(events: &[PipelineEvent]) -> Result<StageBreakdown> {
    let mut open: alloc::collections::BTreeMap<TaskId, (u64, EventKind)> = Default::default();
    let mut spans: Vec<(u64, u64, TaskId, Stage)> = Vec::new();
    let mut last_ts = 0;
    for e in events {
        if e.ts < last_ts {
            return Err(Error::MalformedLog("timestamps decrease"));
        }
        last_ts = e.ts;
        if e.kind.is_start() {
            if open.insert(e.task, (e.ts, e.kind)).is_some() {
                return Err(Error::MalformedLog("task started twice"));
            }
        } else {
            let (s, k) = open.remove(&e.task).ok_or(Error::MalformedLog("end without start"))?;
            if k.stage() != e.kind.stage() {
                return Err(Error::MalformedLog("mismatched start/end kinds"));
            }
            if e.ts <= s {
                return Err(Error::MalformedLog("end not after start"));
            }
            spans.push((s, e.ts, e.task, e.kind.stage()));
        }
    }
    if !open.is_empty() {
        return Err(Error::MalformedLog("unterminated task"));
    }
    // By end, then longest first, then lowest id.
    spans.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));
    let mut out = StageBreakdown::default();
    let mut t = spans.last().map_or(0, |s| s.1);
    while t > 0 {
        let upto = spans.partition_point(|s| s.1 <= t);
        match spans[..upto].last() {
            Some(&(_, end, _, _)) if end == t => {
                let first = spans[..upto].partition_point(|s| s.1 < t);
                let (s, e, _, stage) = spans[first];
                out.add(stage, e - s);
                t = s;
            }
            Some(&(_, end, _, _)) => {
                out.add(Stage::Other, t - end);
                t = end;
            }
            None => {
                out.add(Stage::Other, t);
                t = 0;
            }
        }
    }
    Ok(out)
}

/// Runs a single period as its own graph, with nothing cached before it.
pub fn execute_period(
    plan: &PeriodPlan,
    mode: PipelineMode,
    device: DeviceModel,
    geometry: &ChunkGeometry,
    bytes_per_token: u64,
    probe_bytes: u64,
    suffix_tokens: u32,
) -> Result<(TaskGraph, Schedule)> {
    let mut b = PipelineBuilder::new(mode, device);
    let n = u64::from(geometry.prefix_len());
    let head = b.begin_period(plan.period, plan.first_layer, Some(probe_bytes), Some(n));
    let works = layer_works(plan, &mut b, geometry, bytes_per_token, suffix_tokens)?;
    b.add_layers(plan.period, &head, &works, plan.subperiod);
    let graph = b.into_graph();
    let schedule = execute(&graph)?;
    Ok((graph, schedule))
}

/// Adds speculative tasks for `plan` and lowers each layer plan to work items.
pub fn layer_works(
    plan: &PeriodPlan,
    b: &mut PipelineBuilder,
    geometry: &ChunkGeometry,
    bytes_per_token: u64,
    suffix_tokens: u32,
) -> Result<Vec<LayerWork>> {
    let bytes_of = |chunks: &[u32]| -> Result<u64> {
        let mut t = 0u64;
        for &j in chunks {
            t += u64::from(geometry.logical_len(j)?);
        }
        Ok(t * bytes_per_token)
    };
    let mut spec_tasks: Vec<(u32, TaskId)> = Vec::new();
    for load in &plan.speculative.loads {
        let id = b.add_speculative(plan.period, load.layer, load.chunks.clone(), bytes_of(&load.chunks)?, None);
        spec_tasks.push((load.layer, id));
    }
    let selected = bytes_of(&plan.identified.indices)? / bytes_per_token.max(1);
    let mut works = Vec::with_capacity(plan.layers.len());
    for lp in &plan.layers {
        let load_bytes = bytes_of(&lp.loads)?;
        works.push(LayerWork {
            layer: lp.layer,
            load_units: lp.loads.clone(),
            load_bytes,
            load_ops: coalesce_runs(&lp.loads).len() as u64,
            transfer_bytes: load_bytes + bytes_of(&lp.speculative_hits)? + bytes_of(&lp.mid_hits)?,
            compute_tokens: selected + u64::from(suffix_tokens),
            gathered_tokens: 0,
            speculative_tasks: if lp.speculative_hits.is_empty() {
                Vec::new()
            } else {
                spec_tasks.iter().filter(|(l, _)| *l == lp.layer).map(|&(_, id)| id).collect()
            },
        });
    }
    Ok(works)
}

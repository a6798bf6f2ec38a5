use std::collections::BTreeMap;

use ckv::realio::{replay, run_real_io, RealIoOptions};
use ckv::store::{build_synthetic_store, LayoutKind, StoreManifest};
use ckv_core::cache::TierConfig;
use ckv_core::model::{ChunkGeometry, ModelConfig, SizingMode};
use ckv_core::pipeline::EventKind;
use ckv_core::sim::{simulate_request, PipelineKind, SystemConfig};
use ckv_core::workload::{generate_trace, GeneratorSpec, TraceManifest};

fn model() -> ModelConfig {
    ModelConfig { num_layers: 8, hidden_dim: 256, kv_heads: 2, head_dim: 64, bytes_per_element: 2, sizing: SizingMode::HiddenKvHeads }
}

#[test]
fn real_io_counters_match_simulation() {
    let geometry = ChunkGeometry::new(300, 16).unwrap();
    let m = TraceManifest::round_robin(model(), geometry, 2, 2, 8, GeneratorSpec::default());
    let trace = generate_trace(&m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut stores = [BTreeMap::new(), BTreeMap::new()];
    for (slot, (layout, unit)) in [(LayoutKind::ContiguousChunk, 16), (LayoutKind::CoarseBlock, 64)].into_iter().enumerate() {
        for p in 0..2u64 {
            let prefix = ckv_core::model::PrefixId(p);
            let root = dir.path().join(format!("{}-{p}", layout.as_str()));
            let sm = StoreManifest::new(prefix, model(), 300, layout, unit).unwrap();
            stores[slot].insert(prefix, build_synthetic_store(&root, sm, 42).unwrap().0);
        }
    }
    let order: Vec<usize> = (0..trace.requests.len()).collect();
    let opts = RealIoOptions { time_scale: 0.0 };
    for kind in PipelineKind::ALL {
        let mut cfg = SystemConfig::preset(kind, 0.25);
        cfg.tiers =
            TierConfig { fast_capacity: 2_000_000, mid_capacity: 8_000_000, fast_prefetch_buffer: 200_000, mid_prefetch_buffer: 1_000_000 };
        let s = &stores[usize::from(kind.is_coarse())];
        for warm in [false, true] {
            let rows = run_real_io(&cfg, &trace, s, &order, warm, &opts).unwrap();
            assert_eq!(rows.len(), 4);
            assert!(rows.iter().all(|r| r.ssd_bytes >= r.probe_bytes && r.wall_ttft_s > 0.0));
        }
    }
    // A store with the wrong unit size is rejected.
    let cfg = SystemConfig::preset(PipelineKind::ContiguousKv, 0.25);
    assert!(run_real_io(&cfg, &trace, &stores[1], &order, false, &opts).is_err());
}

#[test]
fn wall_clock_log_respects_dependencies() {
    let geometry = ChunkGeometry::new(256, 16).unwrap();
    let m = TraceManifest::round_robin(model(), geometry, 1, 1, 8, GeneratorSpec::default());
    let trace = generate_trace(&m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sm = StoreManifest::new(ckv_core::model::PrefixId(0), model(), 256, LayoutKind::ContiguousChunk, 16).unwrap();
    let (store, _) = build_synthetic_store(dir.path(), sm, 1).unwrap();
    let cfg = SystemConfig::preset(PipelineKind::ContiguousKv, 0.25);
    let mut cache = cfg.new_cache().unwrap();
    let out = simulate_request(&cfg, &model(), &trace.requests[0], 0, &mut cache).unwrap();
    let r = replay(&out.graph, &store, &RealIoOptions { time_scale: 0.01 }, cfg.device.tick_ns).unwrap();
    assert_eq!(r.events.len(), 2 * out.graph.len());
    let mut start = vec![0u64; out.graph.len()];
    let mut end = vec![0u64; out.graph.len()];
    for e in &r.events {
        if e.kind.is_start() {
            start[e.task] = e.ts
        } else {
            end[e.task] = e.ts
        }
    }
    for (id, t) in out.graph.tasks.iter().enumerate() {
        assert!(end[id] > start[id]);
        for &d in &t.deps {
            assert!(start[id] >= end[d], "task {id} started before dep {d} ended");
        }
    }
    assert!(r.events.windows(2).all(|w| w[0].ts <= w[1].ts));
    assert_eq!(r.breakdown.total(), r.events.last().unwrap().ts);
    assert!(r.events.iter().any(|e| e.kind == EventKind::ComputeEnd));
}

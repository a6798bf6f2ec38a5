//! The `ckv` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ckv_core::model::{BudgetConfig, ChunkGeometry, ModelConfig, PrefixId, SizingMode};
use ckv_core::sim::{
    run_experiment, simulate_request, ExperimentOptions, PipelineKind, Report, DEFAULT_BLOCK_TOKENS, DEFAULT_CHUNK_TOKENS,
};
use ckv_core::workload::{generate_trace, AttentionTrace, GeneratorSpec, ScoreDistribution, TraceManifest};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{
    parse_pipeline_mode, parse_systems, resolve_out, FileConfig, RunMode, RunSpec, DEFAULT_BUDGET, DEFAULT_PERIOD, DEFAULT_SEED,
    DEFAULT_SUBPERIOD, OUTPUT_DIR_ENV,
};
use crate::error::{Error, IoContext, Result};
use crate::realio::{run_real_io, RealIoOptions, RealIoRow};
use crate::report::{comparison_table, write_json, write_ndjson, write_report};
use crate::store::{build_synthetic_store, open_store, BuildOutcome, LayoutKind, StoreHandle, StoreManifest};
use crate::trace_file::{read_trace, write_trace};

#[derive(Debug, Parser)]
#[command(name = "ckv", version, about = "Chunked KV-cache offloading simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic attention-score trace.
    GenTrace(GenTraceArgs),
    /// Build contiguous-chunk and coarse-block stores for a trace's prefixes.
    InitStore(InitStoreArgs),
    /// Run one or more systems over a trace.
    Run(RunArgs),
    /// Run several systems and print speedups against a baseline.
    Compare(RunArgs),
    /// Run the selected systems at several budget ratios.
    Sweep(RunArgs),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn budget_ratio(s: &str) -> std::result::Result<f64, String> {
    let v = unit_interval(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("budget must be in (0, 1]".into())
    }
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub layers: u32,
    #[arg(long, default_value_t = 6000)]
    pub prefix_tokens: u32,
    #[arg(long, default_value_t = DEFAULT_CHUNK_TOKENS)]
    pub chunk: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Target adjacent-period coverage.
    #[arg(long, default_value_t = 0.58, value_parser = unit_interval)]
    pub similarity: f64,
    #[arg(long, default_value_t = 1)]
    pub prefixes: u32,
    #[arg(long, default_value_t = 1)]
    pub requests_per_prefix: u32,
    #[arg(long, default_value_t = 32)]
    pub suffix_tokens: u32,
    /// Budget the similarity target is calibrated at.
    #[arg(long, default_value_t = DEFAULT_BUDGET, value_parser = budget_ratio)]
    pub budget: f64,
    #[arg(long, default_value_t = DEFAULT_PERIOD)]
    pub period: u32,
    /// zipf, uniform or qk.
    #[arg(long, default_value = "zipf")]
    pub distribution: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 16)]
    pub segment_tokens: u32,
    #[arg(long, default_value_t = 0.8, value_parser = unit_interval)]
    pub request_correlation: f64,
    #[arg(long, default_value_t = 3584)]
    pub hidden_dim: u32,
    #[arg(long, default_value_t = 4)]
    pub kv_heads: u32,
    #[arg(long, default_value_t = 128)]
    pub head_dim: u32,
    #[arg(long, default_value_t = 2)]
    pub bytes_per_element: u32,
    /// Use 2 * kv_heads * head_dim * bytes per token instead of
    /// hidden_dim * kv_heads * bytes.
    #[arg(long)]
    pub per_head_sizing: bool,
}

#[derive(Debug, Args)]
pub struct InitStoreArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub store_root: PathBuf,
    /// Seed for the synthetic KV bytes; defaults to the trace seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_TOKENS)]
    pub chunk: u32,
    #[arg(long, default_value_t = DEFAULT_BLOCK_TOKENS)]
    pub coarse: u32,
    /// Report sizes without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub store_root: Option<PathBuf>,
    /// Output directory (also settable through the environment).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with defaults; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Alias of --systems for a single system.
    #[arg(long)]
    pub system: Option<String>,
    /// Comma-separated pipeline kinds.
    #[arg(long)]
    pub systems: Option<String>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, value_parser = budget_ratio)]
    pub budget: Option<f64>,
    /// Comma-separated budget ratios for `sweep`.
    #[arg(long, value_delimiter = ',', value_parser = budget_ratio)]
    pub budgets: Option<Vec<f64>>,
    #[arg(long)]
    pub period: Option<u32>,
    #[arg(long)]
    pub subperiod: Option<u32>,
    #[arg(long)]
    pub chunk: Option<u32>,
    #[arg(long)]
    pub coarse: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sim or real-io.
    #[arg(long)]
    pub mode: Option<String>,
    /// serial, no_prefetch, intra or intra_inter (contiguouskv only).
    #[arg(long)]
    pub pipeline_mode: Option<String>,
    #[arg(long)]
    pub repetitions: Option<u32>,
    #[arg(long)]
    pub no_warmup: bool,
    /// Scale on modeled link/compute sleeps in real-io mode.
    #[arg(long)]
    pub time_scale: Option<f64>,
    /// Also write NDJSON event logs for the measured pass.
    #[arg(long)]
    pub events: bool,
}

impl RunArgs {
    pub fn resolve(&self, default_systems: &[PipelineKind]) -> Result<RunSpec> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let trace = self.trace.clone().or(file.trace).ok_or_else(|| Error::Usage("--trace is required".into()))?;
        let systems = match (self.systems.as_deref().or(self.system.as_deref()), &file.systems) {
            (Some(s), _) => parse_systems(s)?,
            (None, Some(list)) => parse_systems(&list.join(","))?,
            (None, None) => default_systems.to_vec(),
        };
        if systems.is_empty() {
            return Err(Error::Usage("no systems selected".into()));
        }
        let baseline = match self.baseline.as_deref().or(file.baseline.as_deref()) {
            Some(b) => Some(b.parse::<PipelineKind>().map_err(|e| Error::Usage(e.to_string()))?),
            None => None,
        };
        let mode = self.mode.as_deref().or(file.mode.as_deref()).unwrap_or("sim").parse()?;
        let pipeline_mode = self.pipeline_mode.as_deref().or(file.pipeline_mode.as_deref()).map(parse_pipeline_mode).transpose()?;
        let env_out = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let budget = self.budget.or(file.budget).unwrap_or(DEFAULT_BUDGET);
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(Error::Usage(format!("budget {budget} outside (0, 1]")));
        }
        let repetitions = self.repetitions.or(file.repetitions).unwrap_or(1);
        if repetitions == 0 {
            return Err(Error::Usage("repetitions must be >= 1".into()));
        }
        let spec = RunSpec {
            trace,
            store_root: self.store_root.clone().or(file.store_root),
            out: resolve_out(self.out.clone(), env_out, file.out),
            systems,
            baseline,
            budget,
            period: self.period.or(file.period).unwrap_or(DEFAULT_PERIOD),
            subperiod: self.subperiod.or(file.subperiod).unwrap_or(DEFAULT_SUBPERIOD),
            chunk: self.chunk.or(file.chunk).unwrap_or(DEFAULT_CHUNK_TOKENS),
            coarse: self.coarse.or(file.coarse).unwrap_or(DEFAULT_BLOCK_TOKENS),
            seed: self.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            mode,
            pipeline_mode,
            repetitions,
            warmup: !self.no_warmup && file.warmup.unwrap_or(true),
            time_scale: self.time_scale.or(file.time_scale).unwrap_or(1.0),
            device: file.device.unwrap_or_default(),
            tiers: file.tiers.unwrap_or_default(),
        };
        Ok(spec)
    }

    fn budgets(&self, file_budgets: Option<Vec<f64>>) -> Vec<f64> {
        self.budgets.clone().or(file_budgets).unwrap_or_else(|| vec![0.05, 0.10, 0.25, 0.50])
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTrace(a) => gen_trace(&a),
        Command::InitStore(a) => init_store(&a),
        Command::Run(a) => {
            let spec = a.resolve(&[PipelineKind::ContiguousKv])?;
            run_systems(&spec, &a, false)
        }
        Command::Compare(a) => {
            let mut spec = a.resolve(&PipelineKind::ALL)?;
            spec.baseline.get_or_insert(PipelineKind::ImpressLike);
            if let Some(b) = spec.baseline {
                if !spec.systems.contains(&b) {
                    spec.systems.push(b);
                }
            }
            run_systems(&spec, &a, true)
        }
        Command::Sweep(a) => sweep(&a),
    }
}

fn gen_trace(a: &GenTraceArgs) -> Result<()> {
    let distribution = match a.distribution.as_str() {
        "zipf" => ScoreDistribution::Zipf { alpha: a.alpha },
        "uniform" => ScoreDistribution::Uniform,
        "qk" => ScoreDistribution::FromQk { head_dim: a.head_dim.min(128), max_queries: a.suffix_tokens.max(1) },
        other => return Err(Error::Usage(format!("unknown distribution `{other}`"))),
    };
    let model = ModelConfig {
        num_layers: a.layers,
        hidden_dim: a.hidden_dim,
        kv_heads: a.kv_heads,
        head_dim: a.head_dim,
        bytes_per_element: a.bytes_per_element,
        sizing: if a.per_head_sizing { SizingMode::PerHead } else { SizingMode::HiddenKvHeads },
    };
    let period = a.period.min(a.layers).max(1);
    let generator = GeneratorSpec {
        seed: a.seed,
        similarity: a.similarity,
        distribution,
        request_correlation: a.request_correlation,
        calibration: BudgetConfig { budget_ratio: a.budget, period_size: period, subperiod_size: 1 },
        segment_tokens: a.segment_tokens,
    };
    let geometry = ChunkGeometry::new(a.prefix_tokens, a.chunk)?;
    let manifest = TraceManifest::round_robin(model, geometry, a.prefixes, a.requests_per_prefix, a.suffix_tokens, generator);
    manifest.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let trace = generate_trace(&manifest)?;
    write_trace(&trace, &a.out)?;
    println!(
        "trace {}: {} requests, {} prefixes, {} layers, n={}, c={}, m={}, seed={}, similarity={}",
        a.out.display(),
        trace.requests.len(),
        a.prefixes,
        model.num_layers,
        geometry.prefix_len(),
        geometry.chunk_size(),
        geometry.num_chunks(),
        a.seed,
        a.similarity
    );
    println!("bytes per token: {}", model.bytes_per_token());
    Ok(())
}

pub fn store_dir(root: &Path, layout: LayoutKind, unit: u32, prefix: PrefixId) -> PathBuf {
    let tag = match layout {
        LayoutKind::ContiguousChunk => format!("contiguous_c{unit}"),
        LayoutKind::CoarseBlock => format!("coarse_b{unit}"),
    };
    root.join(tag).join(format!("prefix-{}", prefix.0))
}

fn init_store(a: &InitStoreArgs) -> Result<()> {
    let trace = read_trace(&a.trace)?;
    let m = &trace.manifest;
    let seed = a.seed.unwrap_or(m.generator.seed);
    let prefixes: BTreeSet<PrefixId> = m.requests.iter().map(|r| r.prefix).collect();
    println!(
        "bytes per token: {} (keys {}, values {})",
        m.model.bytes_per_token(),
        m.model.key_bytes_per_token(),
        m.model.value_bytes_per_token()
    );
    let mut total = 0u64;
    for layout in [(LayoutKind::ContiguousChunk, a.chunk), (LayoutKind::CoarseBlock, a.coarse)] {
        for &p in &prefixes {
            let sm = StoreManifest::new(p, m.model, m.geometry.prefix_len(), layout.0, layout.1)?;
            let dir = store_dir(&a.store_root, layout.0, layout.1, p);
            total += sm.total_bytes();
            if a.dry_run {
                println!("{} {} bytes (dry run)", dir.display(), sm.total_bytes());
                continue;
            }
            let (h, outcome) = build_synthetic_store(&dir, sm, seed)?;
            let hm = h.manifest();
            let tag = match outcome {
                BuildOutcome::Created => "created",
                BuildOutcome::Verified => "verified",
            };
            println!(
                "{} {} bytes, {} units/layer, layer 0 keys {} ({tag})",
                dir.display(),
                hm.total_bytes(),
                hm.geometry.num_chunks(),
                hm.layers.first().map(|l| l.keys_checksum.as_str()).unwrap_or("-")
            );
        }
    }
    println!("total {} bytes", total);
    Ok(())
}

fn open_stores(spec: &RunSpec, trace: &AttentionTrace, layout: LayoutKind, unit: u32) -> Result<BTreeMap<PrefixId, StoreHandle>> {
    let root = spec.store_root.as_ref().ok_or_else(|| Error::Usage("--store-root is required in real-io mode".into()))?;
    let mut out = BTreeMap::new();
    for r in &trace.manifest.requests {
        if out.contains_key(&r.prefix) {
            continue;
        }
        let dir = store_dir(root, layout, unit, r.prefix);
        if !dir.join("manifest.json").exists() {
            return Err(Error::MissingStore(format!("{} ({})", layout.as_str(), dir.display())));
        }
        out.insert(r.prefix, open_store(&dir)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct RealIoSummary<'a> {
    format_version: u32,
    run: &'a RunSpec,
    rows: &'a [RealIoRow],
}

fn experiment(spec: &RunSpec, trace: &AttentionTrace, budget: f64) -> Result<Report> {
    let configs = spec.configs(budget);
    let opts = ExperimentOptions { order: Vec::new(), repetitions: spec.repetitions, warmup: spec.warmup };
    let mut report = run_experiment(&configs, trace, &opts)?;
    if let Some(b) = spec.baseline {
        let label = configs
            .iter()
            .find(|c| c.kind == b)
            .map(|c| c.label())
            .ok_or_else(|| Error::Usage(format!("baseline {} not among systems", b.as_str())))?;
        report.set_baseline(&label)?;
    }
    Ok(report)
}

fn run_systems(spec: &RunSpec, a: &RunArgs, compare: bool) -> Result<()> {
    let trace = read_trace(&spec.trace)?;
    let report = experiment(spec, &trace, spec.budget)?;
    let (csv, json) = write_report(&report, spec, &spec.out)?;
    if compare || report.systems.len() > 1 {
        print!("{}", comparison_table(&report));
    } else {
        for s in &report.systems {
            println!("{}: mean TTFT {:.6} s, P95 {:.6} s, requests {}", s.label, s.mean_ttft_s, s.p95_ttft_s, s.requests);
        }
    }
    println!("wrote {} and {}", csv.display(), json.display());
    if a.events {
        write_events(spec, &trace)?;
    }
    if spec.mode == RunMode::RealIo {
        let opts = RealIoOptions { time_scale: spec.time_scale };
        let order: Vec<usize> = (0..trace.requests.len()).collect();
        let mut rows = Vec::new();
        for cfg in spec.configs(spec.budget) {
            let layout = if cfg.kind.is_coarse() { LayoutKind::CoarseBlock } else { LayoutKind::ContiguousChunk };
            let stores = open_stores(spec, &trace, layout, cfg.chunk_tokens)?;
            rows.extend(run_real_io(&cfg, &trace, &stores, &order, spec.warmup, &opts)?);
        }
        let path = spec.out.join("realio.csv");
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path).at(&path)?));
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().at(&path)?;
        write_json(&RealIoSummary { format_version: 1, run: spec, rows: &rows }, &spec.out.join("realio.json"))?;
        println!("real-io counters match simulation for {} requests; wrote {}", rows.len(), path.display());
    }
    Ok(())
}

fn write_events(spec: &RunSpec, trace: &AttentionTrace) -> Result<()> {
    let model = &trace.manifest.model;
    for cfg in spec.configs(spec.budget) {
        let dir = spec.out.join("events").join(cfg.label());
        fs::create_dir_all(&dir).at(&dir)?;
        let mut cache = cfg.new_cache()?;
        if spec.warmup {
            for (i, r) in trace.requests.iter().enumerate() {
                simulate_request(&cfg, model, r, i, &mut cache)?;
            }
        }
        for (i, r) in trace.requests.iter().enumerate() {
            let out = simulate_request(&cfg, model, r, i, &mut cache)?;
            let path = dir.join(format!("request-{i}.ndjson"));
            write_ndjson(&out.schedule.events, BufWriter::new(File::create(&path).at(&path)?)).at(&path)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct SweepRow {
    pub budget: f64,
    pub system: String,
    pub mean_ttft_s: f64,
    pub p95_ttft_s: f64,
    pub mean_read_amplification: Option<f64>,
    pub tokens_loaded_from_ssd: u64,
    pub normalized_tokens_loaded: Option<f64>,
    pub critical_kv_load_share: f64,
    pub speedup_vs_baseline: Option<f64>,
}

fn sweep(a: &RunArgs) -> Result<()> {
    let file_budgets = match &a.config {
        Some(p) => FileConfig::load(p)?.budgets,
        None => None,
    };
    let spec = a.resolve(&[PipelineKind::ContiguousKv])?;
    let trace = read_trace(&spec.trace)?;
    let mut rows = Vec::new();
    for b in a.budgets(file_budgets) {
        let report = experiment(&spec, &trace, b)?;
        write_report(&report, &RunSpec { budget: b, ..spec.clone() }, &spec.out.join(format!("budget-{b:.2}")))?;
        for s in &report.systems {
            rows.push(SweepRow {
                budget: b,
                system: s.label.clone(),
                mean_ttft_s: s.mean_ttft_s,
                p95_ttft_s: s.p95_ttft_s,
                mean_read_amplification: s.mean_read_amplification,
                tokens_loaded_from_ssd: s.tokens_loaded_from_ssd,
                normalized_tokens_loaded: s.normalized_tokens_loaded,
                critical_kv_load_share: s.stage_shares.critical_kv_load,
                speedup_vs_baseline: s.speedup_vs_baseline,
            });
        }
    }
    fs::create_dir_all(&spec.out).at(&spec.out)?;
    let path = spec.out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path).at(&path)?));
    println!("{:>6} {:<28} {:>12} {:>12}", "budget", "system", "mean_ttft_s", "p95_ttft_s");
    for r in &rows {
        println!("{:>6.2} {:<28} {:>12.6} {:>12.6}", r.budget, r.system, r.mean_ttft_s, r.p95_ttft_s);
        w.serialize(r)?;
    }
    w.flush().at(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

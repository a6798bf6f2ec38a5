//! Report files: one CSV row per system and request, a JSON summary, and
//! NDJSON event logs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ckv_core::pipeline::PipelineEvent;
use ckv_core::sim::{Report, RequestMetrics, SystemSummary, TraceInfo, REPORT_FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

pub const CSV_COLUMNS_VERSION: u32 = 1;
pub const CSV_FILE: &str = "requests.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// CSV column set, version [`CSV_COLUMNS_VERSION`]. Times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub columns_version: u32,
    pub system: String,
    pub pass: u32,
    pub request: usize,
    pub prefix: u64,
    pub ttft_ticks: u64,
    pub ttft_s: f64,
    pub probe_load_s: f64,
    pub identify_s: f64,
    pub critical_kv_load_s: f64,
    pub compute_s: f64,
    pub other_s: f64,
    pub tokens_loaded_from_ssd: u64,
    pub demand_tokens_read: u64,
    pub demand_tokens_needed: u64,
    pub demand_read_ops: u64,
    pub speculative_tokens_loaded: u64,
    pub speculative_tokens_used: u64,
    pub probe_bytes: u64,
    pub ssd_bytes: u64,
    pub link_bytes: u64,
    /// Empty when no tokens were needed from the SSD.
    pub read_amplification: Option<f64>,
    pub units_needed: u64,
    pub fast_hits: u64,
    pub mid_hits: u64,
    pub fast_hit_rate: f64,
    pub mid_hit_rate: f64,
    /// Per-period delta chunk counts joined by `;`.
    pub period_delta_chunks: String,
}

impl CsvRow {
    pub fn from_metrics(m: &RequestMetrics, tick_ns: u64) -> Self {
        let s = |t: u64| t as f64 * tick_ns as f64 * 1e-9;
        let b = &m.breakdown;
        Self {
            columns_version: CSV_COLUMNS_VERSION,
            system: m.system.clone(),
            pass: m.pass,
            request: m.request,
            prefix: m.prefix.0,
            ttft_ticks: m.ttft_ticks,
            ttft_s: m.ttft_s,
            probe_load_s: s(b.probe_load),
            identify_s: s(b.identify),
            critical_kv_load_s: s(b.critical_kv_load),
            compute_s: s(b.compute),
            other_s: s(b.other),
            tokens_loaded_from_ssd: m.tokens_loaded_from_ssd,
            demand_tokens_read: m.demand.tokens_read,
            demand_tokens_needed: m.demand.tokens_needed,
            demand_read_ops: m.demand.read_ops,
            speculative_tokens_loaded: m.speculative_tokens_loaded,
            speculative_tokens_used: m.speculative_tokens_used,
            probe_bytes: m.probe_bytes,
            ssd_bytes: m.ssd_bytes,
            link_bytes: m.link_bytes,
            read_amplification: m.read_amplification,
            units_needed: m.units_needed,
            fast_hits: m.fast_hits,
            mid_hits: m.mid_hits,
            fast_hit_rate: m.fast_hit_rate,
            mid_hit_rate: m.mid_hit_rate,
            period_delta_chunks: m.period_delta_chunks.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

/// Everything in a [`Report`] except the per-request rows, plus the
/// caller's resolved run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<R> {
    pub format_version: u32,
    pub csv_columns_version: u32,
    pub percentile_method: String,
    pub tick_ns: u64,
    pub trace: TraceInfo,
    pub order: Vec<usize>,
    pub repetitions: u32,
    pub warmup: bool,
    pub baseline: Option<String>,
    pub run: R,
    pub systems: Vec<SystemSummary>,
}

pub fn summary<R: Clone>(report: &Report, run: &R) -> Summary<R> {
    Summary {
        format_version: REPORT_FORMAT_VERSION,
        csv_columns_version: CSV_COLUMNS_VERSION,
        percentile_method: report.percentile_method.clone(),
        tick_ns: report.tick_ns,
        trace: report.trace.clone(),
        order: report.order.clone(),
        repetitions: report.repetitions,
        warmup: report.warmup,
        baseline: report.baseline.clone(),
        run: run.clone(),
        systems: report.systems.clone(),
    }
}

pub fn write_csv<W: Write>(rows: &[RequestMetrics], tick_ns: u64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CsvRow::from_metrics(r, tick_ns))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).at(path)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

/// Writes `requests.csv` and `summary.json` under `dir`.
pub fn write_report<R: Serialize + Clone>(report: &Report, run: &R, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).at(dir)?;
    let csv_path = dir.join(CSV_FILE);
    let f = File::create(&csv_path).at(&csv_path)?;
    write_csv(&report.rows, report.tick_ns, BufWriter::new(f))?;
    let json_path = dir.join(SUMMARY_FILE);
    write_json(&summary(report, run), &json_path)?;
    Ok((csv_path, json_path))
}

pub fn write_ndjson<W: Write>(events: &[PipelineEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_ndjson(text: &str) -> serde_json::Result<Vec<PipelineEvent>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Fixed-width comparison table; speedup is `baseline mean / system mean`.
pub fn comparison_table(report: &Report) -> String {
    let mut s = format!(
        "{:<28} {:>12} {:>12} {:>8} {:>12} {:>9} {:>8}\n",
        "system", "mean_ttft_s", "p95_ttft_s", "ra", "norm_tokens", "kv_share", "speedup"
    );
    for sys in &report.systems {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        s.push_str(&format!(
            "{:<28} {:>12.6} {:>12.6} {:>8} {:>12} {:>9.3} {:>8}\n",
            sys.label,
            sys.mean_ttft_s,
            sys.p95_ttft_s,
            opt(sys.mean_read_amplification, 2),
            opt(sys.normalized_tokens_loaded, 4),
            sys.stage_shares.critical_kv_load,
            opt(sys.speedup_vs_baseline, 3),
        ));
    }
    s
}

//! Run settings: optional TOML file, command-line flags, and the resolved
//! [`RunSpec`] recorded in every report.

use std::path::{Path, PathBuf};

use ckv_core::cache::TierConfig;
use ckv_core::device::DeviceModel;
use ckv_core::pipeline::PipelineMode;
use ckv_core::sim::{PipelineKind, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const OUTPUT_DIR_ENV: &str = "CKV_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "ckv-out";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BUDGET: f64 = 0.25;
pub const DEFAULT_PERIOD: u32 = 8;
pub const DEFAULT_SUBPERIOD: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Sim,
    RealIo,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(RunMode::Sim),
            "real-io" => Ok(RunMode::RealIo),
            _ => Err(Error::Usage(format!("unknown mode `{s}` (expected sim or real-io)"))),
        }
    }
}

pub fn parse_pipeline_mode(s: &str) -> Result<PipelineMode> {
    [PipelineMode::Serial, PipelineMode::NoPrefetch, PipelineMode::Intra, PipelineMode::IntraInter]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| Error::Usage(format!("unknown pipeline mode `{s}`")))
}

pub fn parse_systems(list: &str) -> Result<Vec<PipelineKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<PipelineKind>().map_err(|e| Error::Usage(e.to_string())))
        .collect()
}

/// Settings that may come from a TOML file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub trace: Option<PathBuf>,
    pub store_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub systems: Option<Vec<String>>,
    pub baseline: Option<String>,
    pub budget: Option<f64>,
    pub budgets: Option<Vec<f64>>,
    pub period: Option<u32>,
    pub subperiod: Option<u32>,
    pub chunk: Option<u32>,
    pub coarse: Option<u32>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub pipeline_mode: Option<String>,
    pub repetitions: Option<u32>,
    pub warmup: Option<bool>,
    pub time_scale: Option<f64>,
    pub device: Option<DeviceModel>,
    pub tiers: Option<TierConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(toml::from_str(&text)?)
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub trace: PathBuf,
    pub store_root: Option<PathBuf>,
    pub out: PathBuf,
    pub systems: Vec<PipelineKind>,
    pub baseline: Option<PipelineKind>,
    pub budget: f64,
    pub period: u32,
    pub subperiod: u32,
    pub chunk: u32,
    pub coarse: u32,
    pub seed: u64,
    pub mode: RunMode,
    pub pipeline_mode: Option<PipelineMode>,
    pub repetitions: u32,
    pub warmup: bool,
    pub time_scale: f64,
    pub device: DeviceModel,
    pub tiers: TierConfig,
}

impl RunSpec {
    pub fn system_config(&self, kind: PipelineKind, budget: f64) -> SystemConfig {
        let mut cfg = SystemConfig::preset(kind, budget);
        if kind == PipelineKind::ContiguousKv {
            cfg.chunk_tokens = self.chunk;
            cfg.budget.period_size = self.period;
            cfg.budget.subperiod_size = self.subperiod;
            if let Some(m) = self.pipeline_mode {
                cfg.mode = m;
            }
        } else {
            cfg.chunk_tokens = self.coarse;
        }
        cfg.device = self.device;
        cfg.tiers = self.tiers;
        cfg
    }

    pub fn configs(&self, budget: f64) -> Vec<SystemConfig> {
        self.systems.iter().map(|&k| self.system_config(k, budget)).collect()
    }
}

/// Output directory: flag, then environment, then file, then default.
pub fn resolve_out(flag: Option<PathBuf>, env: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(env).or(file).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_helpers() {
        assert_eq!(parse_systems("contiguouskv, impress_like").unwrap(), vec![PipelineKind::ContiguousKv, PipelineKind::ImpressLike]);
        assert!(parse_systems("vllm").is_err());
        assert_eq!(parse_pipeline_mode("no_prefetch").unwrap(), PipelineMode::NoPrefetch);
        assert_eq!("real-io".parse::<RunMode>().unwrap(), RunMode::RealIo);
        assert!("fast".parse::<RunMode>().is_err());
    }

    #[test]
    fn output_dir_precedence() {
        let p = |s: &str| Some(PathBuf::from(s));
        assert_eq!(resolve_out(p("flag"), p("env"), p("file")), PathBuf::from("flag"));
        assert_eq!(resolve_out(None, p("env"), p("file")), PathBuf::from("env"));
        assert_eq!(resolve_out(None, None, p("file")), PathBuf::from("file"));
        assert_eq!(resolve_out(None, None, None), PathBuf::from(DEFAULT_OUTPUT_DIR));
    }

    #[test]
    fn file_config_parses_nested_tables() {
        let text = r#"
            budget = 0.1
            systems = ["contiguouskv", "as_lru"]
            [tiers]
            fast_capacity = 1000
            mid_capacity = 2000
            fast_prefetch_buffer = 10
            mid_prefetch_buffer = 20
        "#;
        let f: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(f.budget, Some(0.1));
        assert_eq!(f.tiers.unwrap().mid_capacity, 2000);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}

//! Timing model for the storage path and the compute stream.
//!
//! All durations are whole ticks (default 1 µs) so schedules compare exactly.
//! The SSD serves one request stream; with `io_queue_depth` requests in flight
//! the per-operation latency is amortized as `latency / depth` per op, and
//! transfer time is `bytes / bandwidth`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Bytes per second.
    pub ssd_bandwidth: u64,
    pub ssd_op_latency_ns: u64,
    /// Host-to-accelerator bytes per second.
    pub link_bandwidth: u64,
    pub io_queue_depth: u32,
    /// Per-layer attention/FFN time: `base + per_token * tokens`.
    pub compute_base_ns: u64,
    pub compute_per_token_ns: u64,
    /// Extra per-token cost of gathering scattered selected tokens out of
    /// coarse blocks before attention.
    pub gather_per_token_ns: u64,
    /// Critical-set identification at a period's first layer.
    pub identify_base_ns: u64,
    pub identify_per_token_ns: u64,
    pub tick_ns: u64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self::nvme_pcie4_preset()
    }
}

impl DeviceModel {
    /// 7.45 GB/s NVMe, 32 GB/s PCIe 4.0 x16, queue depth 8, and compute
    /// coefficients chosen so that probe plus critical-KV loading take about
    /// 65% of a cold impress-like Re-Prefill at a 25% budget on a 6k-token,
    /// 7B-class prefix.
    pub const fn nvme_pcie4_preset() -> Self {
        Self {
            ssd_bandwidth: 7_450_000_000,
            ssd_op_latency_ns: 80_000,
            link_bandwidth: 32_000_000_000,
            io_queue_depth: 8,
            compute_base_ns: 150_000,
            compute_per_token_ns: 8_790,
            gather_per_token_ns: 1_000,
            identify_base_ns: 50_000,
            identify_per_token_ns: 5,
            tick_ns: 1_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ssd_bandwidth == 0 || self.link_bandwidth == 0 {
            return Err(Error::InvalidConfig("bandwidths must be positive"));
        }
        if self.tick_ns == 0 {
            return Err(Error::InvalidConfig("tick must be positive"));
        }
        if self.io_queue_depth == 0 {
            return Err(Error::InvalidConfig("io queue depth must be >= 1"));
        }
        Ok(())
    }

    fn ticks(&self, ns: u128) -> u64 {
        ns.div_ceil(u128::from(self.tick_ns)) as u64
    }

    fn transfer_ns(bytes: u64, bandwidth: u64) -> u128 {
        (u128::from(bytes) * 1_000_000_000).div_ceil(u128::from(bandwidth))
    }

    /// SSD service time for `ops` operations moving `bytes` in total.
    pub fn ssd_ticks(&self, bytes: u64, ops: u64) -> u64 {
        if bytes == 0 && ops == 0 {
            return 0;
        }
        let latency = u128::from(ops) * u128::from(self.ssd_op_latency_ns.div_ceil(u64::from(self.io_queue_depth)));
        self.ticks(latency + Self::transfer_ns(bytes, self.ssd_bandwidth))
    }

    pub fn link_ticks(&self, bytes: u64) -> u64 {
        self.ticks(Self::transfer_ns(bytes, self.link_bandwidth))
    }

    /// One layer over `tokens` tokens, `gathered` of which are scattered
    /// selections that must be re-assembled first.
    pub fn compute_ticks(&self, tokens: u64, gathered: u64) -> u64 {
        self.ticks(
            u128::from(self.compute_base_ns)
                + u128::from(self.compute_per_token_ns) * u128::from(tokens)
                + u128::from(self.gather_per_token_ns) * u128::from(gathered),
        )
    }

    pub fn identify_ticks(&self, tokens: u64) -> u64 {
        self.ticks(u128::from(self.identify_base_ns) + u128::from(self.identify_per_token_ns) * u128::from(tokens))
    }

    pub fn ticks_to_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 * self.tick_ns as f64 * 1e-9
    }
}

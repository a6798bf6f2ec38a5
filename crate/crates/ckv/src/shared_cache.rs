//! A tiered cache shareable across threads, plus JSON snapshots.

use std::path::Path;
use std::sync::RwLock;

use ckv_core::cache::{CacheSnapshot, EvictionReport, Residency, ScoreRecord, Tier, TieredCache};
use ckv_core::model::ChunkKey;

use crate::error::Result;
use crate::report::write_json;

/// Lookups take a shared lock; every mutation takes the exclusive lock, so
/// mutations apply in one total order.
#[derive(Debug)]
pub struct SharedCache {
    inner: RwLock<TieredCache>,
}

impl SharedCache {
    pub fn new(cache: TieredCache) -> Self {
        Self { inner: RwLock::new(cache) }
    }

    pub fn lookup(&self, key: &ChunkKey) -> Residency {
        self.inner.read().expect("cache lock").lookup(key)
    }

    pub fn score(&self, key: &ChunkKey) -> Option<ScoreRecord> {
        self.inner.read().expect("cache lock").score(key).copied()
    }

    pub fn begin_request(&self) {
        self.inner.write().expect("cache lock").begin_request();
    }

    pub fn touch_and_update(&self, key: ChunkKey, a: f64) {
        self.inner.write().expect("cache lock").touch_and_update(key, a);
    }

    pub fn admit(&self, key: ChunkKey, size: u64, tier: Tier) -> Result<EvictionReport> {
        Ok(self.inner.write().expect("cache lock").admit(key, size, tier)?)
    }

    /// Runs `f` with exclusive access, e.g. a whole simulated request.
    pub fn with_mut<T>(&self, f: impl FnOnce(&mut TieredCache) -> T) -> T {
        f(&mut self.inner.write().expect("cache lock"))
    }

    pub fn snapshot(&self) -> CacheSnapshot {
        self.inner.read().expect("cache lock").snapshot()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        write_json(&self.snapshot(), path)
    }

    pub fn into_inner(self) -> TieredCache {
        self.inner.into_inner().expect("cache lock")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ckv_core::cache::{PolicyKind, TierConfig};
    use ckv_core::model::PrefixId;
    use std::sync::Arc;

    #[test]
    fn concurrent_mutations_are_serialized() {
        let cfg = TierConfig { fast_capacity: 1_000, mid_capacity: 4_000, fast_prefetch_buffer: 0, mid_prefetch_buffer: 0 };
        let cache = Arc::new(SharedCache::new(TieredCache::new(PolicyKind::AttentionGuided, cfg).unwrap()));
        std::thread::scope(|s| {
            for t in 0..4u32 {
                let c = Arc::clone(&cache);
                s.spawn(move || {
                    for j in 0..50u32 {
                        let key = ChunkKey::new(PrefixId(0), t, j);
                        c.touch_and_update(key, f64::from(j));
                        c.admit(key, 100, Tier::Fast).unwrap();
                        let _ = c.lookup(&key);
                    }
                });
            }
        });
        let snap = cache.snapshot();
        assert!(snap.fast_used <= 1_000 && snap.mid_used <= 4_000);
        assert_eq!(snap.entries.len(), 200);
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("cache.json");
        cache.write_snapshot(&p).unwrap();
        let back: CacheSnapshot = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back, snap);
    }
}

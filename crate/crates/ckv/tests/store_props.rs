use ckv::core::io::{read_amplification, unit_read_stats};
use ckv::core::model::{ModelConfig, PrefixId, SizingMode};
use ckv::store::{create_store, synthetic_kv, LayoutKind, ReadKind, StoreManifest};
use proptest::prelude::*;

fn model(layers: u32) -> ModelConfig {
    ModelConfig { num_layers: layers, hidden_dim: 3, kv_heads: 1, head_dim: 4, bytes_per_element: 2, sizing: SizingMode::HiddenKvHeads }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunk_reads_round_trip_without_amplification(
        n in 1u32..600,
        c in prop::sample::select(vec![1u32, 5, 16, 64]),
        layers in 1u32..3,
        seed in any::<u64>(),
        pick in prop::collection::vec(any::<bool>(), 0..40),
    ) {
        let m = model(layers);
        let dir = tempfile::tempdir().unwrap();
        let manifest = StoreManifest::new(PrefixId(3), m, n, LayoutKind::ContiguousChunk, c).unwrap();
        let geometry = manifest.geometry;
        let store = create_store(dir.path(), manifest).unwrap();
        let kv: Vec<_> = (0..layers).map(|l| synthetic_kv(seed, PrefixId(3), l, &m, n)).collect();
        for (l, (k, v)) in kv.iter().enumerate() {
            store.write_prefix_kv(l as u32, k, v).unwrap();
        }
        let (kb, vb) = (m.key_bytes_per_token() as usize, m.value_bytes_per_token() as usize);
        let chunks: Vec<u32> = (0..geometry.num_chunks()).filter(|&j| pick.get(j as usize).copied().unwrap_or(false)).collect();
        for (l, (k, v)) in kv.iter().enumerate() {
            let (payload, stats) = store.read_chunks(l as u32, &chunks, ReadKind::KeysAndValues).unwrap();
            prop_assert_eq!(stats, unit_read_stats(&geometry, &chunks, m.bytes_per_token()).unwrap());
            prop_assert!(stats.tokens_read >= stats.tokens_needed);
            prop_assert_eq!(stats.bytes_read, stats.tokens_read * m.bytes_per_token());
            if !chunks.is_empty() {
                prop_assert_eq!(read_amplification(&stats).unwrap().ratio(), 1.0);
            }
            prop_assert_eq!(payload.len(), chunks.len());
            for (p, &j) in payload.iter().zip(&chunks) {
                let r = geometry.token_range(j).unwrap();
                let (s, e) = (r.start as usize, r.end as usize);
                prop_assert_eq!(p.index, j);
                prop_assert_eq!(p.tokens, r.end - r.start);
                prop_assert_eq!(&p.keys[..], &k[s * kb..e * kb]);
                prop_assert_eq!(&p.values[..], &v[s * vb..e * vb]);
                // One read per chunk returns the same bytes as the coalesced run.
                let (single, _) = store.read_chunks(l as u32, &[j], ReadKind::KeysAndValues).unwrap();
                prop_assert_eq!(&single[0], p);
            }
            let (keys_only, ks) = store.read_chunks(l as u32, &chunks, ReadKind::KeysOnly).unwrap();
            prop_assert!(keys_only.iter().all(|p| p.values.is_empty()));
            prop_assert_eq!(ks.bytes_read, ks.tokens_read * m.key_bytes_per_token());
        }
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::aggregate::{aggregate_oracle, BetaFn};
use crate::error::Error;
use crate::nncore::Tensor;

fn v(xs: &[f64]) -> Tensor {
    Tensor::row_vector(xs.to_vec())
}

fn store() -> Store {
    Store::new(StoreConfig { tau: 2.0, window: 64, min_fill: 32, ..StoreConfig::default() }).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, dim: usize) -> Tensor {
    Tensor::row_vector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Fills every kind with enough ordinary writes to establish references.
fn warmed(seed: u64) -> (Store, ChaCha8Rng) {
    let mut s = store();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..100u64 {
        for kind in ReprKind::ALL {
            s.put(ReprKey::new(kind, i % 7), &noise(&mut rng, 4), i as f64).unwrap();
        }
    }
    (s, rng)
}

#[test]
fn ur_replaces_cr_blends() {
    let mut s = store();
    let ur = ReprKey::new(ReprKind::Ur, 1);
    assert!(s.get(ur).is_none());
    s.put(ur, &v(&[1.0, 2.0]), 0.0).unwrap();
    s.put(ur, &v(&[3.0, 4.0]), 1.0).unwrap();
    assert_eq!(s.get(ur).unwrap(), &v(&[3.0, 4.0]));

    let cr = ReprKey::new(ReprKind::CrUser, 1);
    s.put(cr, &v(&[1.0, 0.0]), 0.0).unwrap();
    s.put(cr, &v(&[0.0, 1.0]), 1.0).unwrap();
    let expected = aggregate_oracle(&[(v(&[1.0, 0.0]), 0.0), (v(&[0.0, 1.0]), 1.0)], &BetaFn::new(2.0).unwrap()).unwrap();
    assert_eq!(s.get(cr).unwrap(), &expected);
    assert_ne!(s.get(cr).unwrap(), &v(&[0.0, 1.0]));
}

#[test]
fn anomaly_freezes_its_kind_only() {
    let (mut s, mut rng) = warmed(1);
    assert!(s.reference_stats(ReprKind::Ur).is_some());
    let before = s.to_bytes(0);
    let key = ReprKey::new(ReprKind::Ur, 3);
    let err = s.put(key, &noise(&mut rng, 4).scale(100.0), 150.0).unwrap_err();
    assert!(matches!(err, Error::Frozen(_)));
    assert_eq!(s.to_bytes(0), before, "rejected write must not mutate");
    assert!(s.status(ReprKind::Ur).is_frozen());
    assert!(!s.status(ReprKind::Ir).is_frozen());

    // Ordinary UR writes are now rejected, IR writes still land, reads work.
    assert!(matches!(s.put(key, &noise(&mut rng, 4), 151.0), Err(Error::Frozen(_))));
    s.put(ReprKey::new(ReprKind::Ir, 3), &noise(&mut rng, 4), 151.0).unwrap();
    assert!(s.get(ReprKey::new(ReprKind::Ur, 0)).is_some());
    assert!(matches!(s.snapshot(152.0), Err(Error::Frozen(_))));
}

#[test]
fn non_finite_write_freezes() {
    let (mut s, _) = warmed(2);
    let err = s.put(ReprKey::new(ReprKind::CrItem, 0), &v(&[0.0, f64::NAN, 0.0, 0.0]), 160.0).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(s.status(ReprKind::CrItem).frozen_reason.unwrap().metric, Metric::NonFinite);
}

#[test]
fn rollback_restores_bytes_and_unfreezes() {
    let (mut s, mut rng) = warmed(3);
    let id = s.snapshot(100.0).unwrap();
    let snap_bytes = serialize(id, &s.snapshot_by_id(id).unwrap().contents);
    assert_eq!(s.to_bytes(id), snap_bytes);
    for i in 0..5u64 {
        s.put(ReprKey::new(ReprKind::CrUser, i), &noise(&mut rng, 4), 101.0 + i as f64).unwrap();
    }
    let _ = s.put(ReprKey::new(ReprKind::CrUser, 1), &noise(&mut rng, 4).scale(1e3), 107.0);
    assert!(s.is_frozen());
    s.rollback(id).unwrap();
    assert!(!s.is_frozen());
    assert_eq!(s.to_bytes(id), snap_bytes);

    // No intervening writes: rollback is a no-op on contents.
    s.rollback(id).unwrap();
    assert_eq!(s.to_bytes(id), snap_bytes);
    assert!(matches!(s.rollback(99), Err(Error::NotFound(99))));
}

#[test]
fn snapshots_are_isolated_and_ordered() {
    let mut s = store();
    let empty = s.snapshot(0.0).unwrap();
    assert!(s.snapshot_by_id(empty).unwrap().contents.is_empty());
    s.put(ReprKey::new(ReprKind::Ur, 1), &v(&[1.0]), 1.0).unwrap();
    let a = s.snapshot(1.0).unwrap();
    let b = s.snapshot(1.0).unwrap();
    assert!(empty < a && a < b);
    assert_eq!(s.snapshot_by_id(a).unwrap().contents, s.snapshot_by_id(b).unwrap().contents);
    s.put(ReprKey::new(ReprKind::Ur, 1), &v(&[2.0]), 2.0).unwrap();
    assert_eq!(s.snapshot_by_id(a).unwrap().contents[&ReprKey::new(ReprKind::Ur, 1)].value, v(&[1.0]));
    assert_eq!(s.latest_snapshot(), Some(b));
}

#[test]
fn snapshot_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = warmed(4);
    let mut s = s.with_snapshot_dir(dir.path());
    let id = s.snapshot(100.0).unwrap();
    let path = dir.path().join(format!("snapshot-{id}.rst"));
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"RST1");
    let snap = read_snapshot_file(&path).unwrap();
    assert_eq!(snap.id, id);
    assert_eq!(&snap.contents, s.contents());
    assert_eq!(serialize(snap.id, &snap.contents), bytes);

    let mut corrupt = bytes.clone();
    corrupt[30] ^= 0x40;
    assert!(matches!(deserialize(&corrupt), Err(Error::Integrity(_))));
    assert!(matches!(read_snapshot_file(&dir.path().join("missing.rst")), Err(Error::MissingPrerequisite(_))));
}

#[test]
fn jsonl_export_has_one_line_per_entry() {
    let (s, _) = warmed(5);
    let mut out = Vec::new();
    s.export_jsonl(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), s.len());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["kind"], "ur");
    assert_eq!(first["dim"], 4);
    assert_eq!(first["head"].as_array().unwrap().len(), 4);
}

#[test]
fn bad_config_rejected() {
    assert!(Store::new(StoreConfig { threshold: 0.0, ..StoreConfig::default() }).is_err());
    assert!(Store::new(StoreConfig { min_fill: 500, ..StoreConfig::default() }).is_err());
    assert!(Store::new(StoreConfig { tau: -1.0, ..StoreConfig::default() }).is_err());
}

fn writes() -> impl Strategy<Value = Vec<(u8, u64, [f64; 3], f64)>> {
    prop::collection::vec((0u8..4, 0u64..5, prop::array::uniform3(-1.0..1.0f64), 0.0..3.0f64), 1..80)
}

fn replay(ws: &[(u8, u64, [f64; 3], f64)]) -> Store {
    // A huge threshold keeps the monitor out of the way.
    let mut s = Store::new(StoreConfig { tau: 1.5, threshold: 1e12, window: 8, min_fill: 4, ..StoreConfig::default() }).unwrap();
    let mut t = 0.0;
    for (k, e, x, dt) in ws {
        t += dt;
        s.put(ReprKey::new(ReprKind::from_byte(*k).unwrap(), *e), &v(x), t).unwrap();
    }
    s
}

proptest! {
    #[test]
    fn serialization_round_trip_is_byte_identical(ws in writes(), id in 0u64..1000) {
        let s = replay(&ws);
        let bytes = s.to_bytes(id);
        let (back_id, contents) = deserialize(&bytes).unwrap();
        prop_assert_eq!(back_id, id);
        prop_assert_eq!(serialize(back_id, &contents), bytes);
    }

    #[test]
    fn interleaved_cr_puts_match_per_key_folds(ws in writes()) {
        let s = replay(&ws);
        let beta = BetaFn::new(1.5).unwrap();
        let mut t = 0.0;
        let mut per_key: std::collections::BTreeMap<ReprKey, Vec<(Tensor, f64)>> = Default::default();
        for (k, e, x, dt) in &ws {
            t += dt;
            per_key.entry(ReprKey::new(ReprKind::from_byte(*k).unwrap(), *e)).or_default().push((v(x), t));
        }
        for (key, ups) in per_key {
            let expected = if key.kind.is_aggregated() { aggregate_oracle(&ups, &beta).unwrap() } else { ups.last().unwrap().0.clone() };
            prop_assert_eq!(s.get(key).unwrap(), &expected);
        }
    }

    #[test]
    fn frozen_kind_rejects_every_write(ws in writes(), scale in 50.0..500.0f64) {
        let (mut s, mut rng) = warmed(6);
        let _ = s.put(ReprKey::new(ReprKind::Ur, 0), &noise(&mut rng, 4).scale(scale), 200.0);
        prop_assume!(s.status(ReprKind::Ur).is_frozen());
        let before = s.to_bytes(0);
        for (_, e, x, _) in &ws {
            let mut x4 = x.to_vec();
            x4.push(0.0);
            prop_assert!(s.put(ReprKey::new(ReprKind::Ur, *e), &v(&x4), 201.0).is_err());
        }
        prop_assert_eq!(s.to_bytes(0), before);
    }
}

#[test]
fn replace_mode_and_snapshot_retention() {
    let mut s = Store::new(StoreConfig { aggregate_cr: false, keep_snapshots: 2, ..StoreConfig::default() }).unwrap();
    let cr = ReprKey::new(ReprKind::CrItem, 4);
    s.put(cr, &v(&[1.0, 0.0]), 0.0).unwrap();
    s.put(cr, &v(&[0.0, 1.0]), 0.5).unwrap();
    assert_eq!(s.get(cr).unwrap(), &v(&[0.0, 1.0]));
    let ids: Vec<u64> = (0..4).map(|i| s.snapshot(i as f64).unwrap()).collect();
    assert!(s.snapshot_by_id(ids[0]).is_none() && s.snapshot_by_id(ids[1]).is_none());
    assert_eq!(s.latest_snapshot(), Some(ids[3]));
    assert!(s.snapshot_by_id(ids[2]).is_some());
}

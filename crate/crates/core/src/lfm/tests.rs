use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::nncore::{grad_check, Adam, AdamConfig, Parameterized, Tensor};
use crate::simstream::{Domain, Event, Task};

fn tiny_config(mode: BranchMode) -> LfmConfig {
    LfmConfig {
        user_vocab: 6,
        item_vocab: 5,
        user_segments: 2,
        item_categories: 3,
        embed_dim: 3,
        tower_hidden: 5,
        ur_dim: 3,
        ir_dim: 2,
        n_cross_layers: 2,
        n_dnn_layers: 2,
        dnn_hidden: 4,
        branch_mode: mode,
        seed: 5,
    }
}

fn tiny_features() -> FeatureMap {
    FeatureMap { user_segment: vec![0, 1, 0, 1, 1, 0], item_category: vec![2, 0, 1, 1, 0] }
}

fn tiny(mode: BranchMode) -> LfmModel {
    build_lfm(&tiny_config(mode), tiny_features()).unwrap()
}

fn ev(user: usize, item: usize, domain: Domain, label: f64) -> Event {
    Event { index: 0, user_id: user, item_id: item, domain, task: Task::Ctr, timestamp: 0.0, label }
}

/// Spreads parameters out so every path carries non-negligible gradient.
fn randomize(model: &mut LfmModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

#[test]
fn build_is_deterministic_and_dual_branches_differ() {
    let a = tiny(BranchMode::Dual);
    let b = tiny(BranchMode::Dual);
    assert_eq!(a, b);
    assert_eq!(a.branches.len(), 2);
    assert_ne!(a.branches[0], a.branches[1]);
    let same = tiny(BranchMode::Same);
    assert_eq!(same.branches.len(), 1);
    assert_eq!(same.user_tower, a.user_tower);
    assert_eq!(same.item_tower, a.item_tower);
}

#[test]
fn invalid_configs_rejected() {
    let cfg = LfmConfig { n_dnn_layers: 1, ..tiny_config(BranchMode::Dual) };
    assert!(matches!(build_lfm(&cfg, tiny_features()), Err(Error::Config(_))));
    let bad = FeatureMap { user_segment: vec![0; 3], item_category: vec![0; 5] };
    assert!(build_lfm(&tiny_config(BranchMode::Dual), bad).is_err());
    let out_of_range = FeatureMap { user_segment: vec![7; 6], item_category: vec![0; 5] };
    assert!(build_lfm(&tiny_config(BranchMode::Dual), out_of_range).is_err());
}

#[test]
fn shared_towers_disjoint_branches() {
    let mut m = tiny(BranchMode::Dual);
    randomize(&mut m, 1);
    let c = m.forward(2, 3, Domain::Content).unwrap();
    let a = m.forward(2, 3, Domain::Ad).unwrap();
    assert_eq!(c.ur, a.ur);
    assert_eq!(c.ir, a.ir);
    assert_ne!(c.prediction, a.prediction);
    let again = m.forward(2, 3, Domain::Ad).unwrap();
    assert_eq!(again.prediction, a.prediction);
    assert_eq!(again.taps, a.taps);
}

#[test]
fn predictions_are_probabilities_and_taps_complete() {
    let mut m = tiny(BranchMode::Dual);
    randomize(&mut m, 2);
    for u in 0..6 {
        for i in 0..5 {
            let out = m.forward(u, i, Domain::Ad).unwrap();
            assert!(out.prediction > 0.0 && out.prediction < 1.0);
            let names: Vec<TapName> = out.taps.keys().copied().collect();
            let mut expected = m.config.taps();
            expected.sort();
            assert_eq!(names, expected);
            for (tap, t) in &out.taps {
                assert_eq!(t.shape(), (1, m.config.tap_dim(*tap).unwrap()));
            }
        }
    }
}

#[test]
fn out_of_vocab_is_lookup_error() {
    let m = tiny(BranchMode::Dual);
    assert!(matches!(m.forward(6, 0, Domain::Ad), Err(Error::Lookup { .. })));
    assert!(matches!(m.forward(0, 5, Domain::Ad), Err(Error::Lookup { .. })));
}

#[test]
fn embed_concat_tap_is_looked_up_embeddings() {
    let m = tiny(BranchMode::Dual);
    let tap = m.extract_cr(4, 2, TapName::embed_concat()).unwrap();
    let parts = [
        m.user_tower.id_embedding.lookup(&[4]).unwrap(),
        m.user_tower.side_embedding.lookup(&[1]).unwrap(),
        m.item_tower.id_embedding.lookup(&[2]).unwrap(),
        m.item_tower.side_embedding.lookup(&[1]).unwrap(),
    ];
    let refs: Vec<&Tensor> = parts.iter().collect();
    assert_eq!(tap, Tensor::concat_cols(&refs).unwrap());
}

#[test]
fn extraction_reads_the_ad_branch_and_is_pure() {
    let mut m = tiny(BranchMode::Dual);
    randomize(&mut m, 3);
    let before = m.clone();
    let via_forward = m.forward(1, 1, Domain::Ad).unwrap();
    for tap in m.config.taps() {
        let cr = m.extract_cr(1, 1, tap).unwrap();
        assert_eq!(&cr, &via_forward.taps[&tap]);
    }
    assert!(matches!(m.extract_cr(1, 1, TapName::dnn(2)), Err(Error::Tap(_))));
    assert!(matches!(m.extract_cr(1, 1, TapName::cross(2)), Err(Error::Tap(_))));
    assert_eq!(m, before);
}

#[test]
fn content_batch_leaves_ad_branch_untouched() {
    let mut m = tiny(BranchMode::Dual);
    randomize(&mut m, 4);
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    // Warm the ad branch's optimizer state first so stale momentum would show.
    m.train_step(&mut opt, &[ev(0, 1, Domain::Ad, 1.0), ev(2, 3, Domain::Ad, 0.0)]).unwrap();
    let ad_before = m.branches[1].flat_values();
    let content_before = m.branches[0].flat_values();
    let tower_before = m.user_tower.flat_values();
    for _ in 0..5 {
        m.train_step(&mut opt, &[ev(0, 1, Domain::Content, 1.0), ev(3, 4, Domain::Content, 0.0)]).unwrap();
    }
    assert_eq!(m.branches[1].flat_values(), ad_before);
    assert_ne!(m.branches[0].flat_values(), content_before);
    assert_ne!(m.user_tower.flat_values(), tower_before);
}

#[test]
fn same_mode_updates_one_branch_from_both_domains() {
    let mut m = tiny(BranchMode::Same);
    randomize(&mut m, 5);
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    let b0 = m.branches[0].clone();
    m.train_step(&mut opt, &[ev(0, 1, Domain::Content, 1.0)]).unwrap();
    let b1 = m.branches[0].clone();
    assert_ne!(b0, b1);
    m.train_step(&mut opt, &[ev(0, 1, Domain::Ad, 0.0)]).unwrap();
    assert_ne!(m.branches[0], b1);
    assert_eq!(m.branch(Domain::Ad), m.branch(Domain::Content));
}

#[test]
fn identical_gradient_streams_keep_same_mode_branches_identical() {
    // In same mode both domains resolve to one parameter set, so any two
    // models fed identical batches stay bitwise equal.
    let mut a = tiny(BranchMode::Same);
    let mut b = tiny(BranchMode::Same);
    let mut oa = Adam::new(AdamConfig::default());
    let mut ob = Adam::new(AdamConfig::default());
    let batch = [ev(1, 2, Domain::Ad, 1.0), ev(3, 0, Domain::Content, 0.0)];
    for _ in 0..10 {
        a.train_step(&mut oa, &batch).unwrap();
        b.train_step(&mut ob, &batch).unwrap();
    }
    assert_eq!(a, b);
    assert!(std::ptr::eq(a.branch(Domain::Ad), a.branch(Domain::Content)));
}

#[test]
fn overfits_a_repeated_batch() {
    let mut m = tiny(BranchMode::Dual);
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
    let batch = [
        ev(0, 1, Domain::Ad, 1.0),
        ev(1, 2, Domain::Ad, 0.0),
        ev(2, 3, Domain::Content, 1.0),
        ev(3, 4, Domain::Content, 0.0),
    ];
    let first = m.loss(&batch).unwrap();
    for _ in 0..100 {
        m.train_step(&mut opt, &batch).unwrap();
    }
    let last = m.loss(&batch).unwrap();
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (seed, mode) in [(10, BranchMode::Dual), (11, BranchMode::Same), (12, BranchMode::Dual)] {
        let mut m = tiny(mode);
        randomize(&mut m, seed);
        let batch = [
            ev(0, 1, Domain::Ad, 1.0),
            ev(5, 2, Domain::Ad, 0.0),
            ev(2, 4, Domain::Content, 1.0),
            ev(3, 0, Domain::Content, 0.0),
        ];
        m.compute_gradients(&batch).unwrap();
        let analytic = m.flat_grads();
        let params = m.flat_values();
        let mut probe = m.clone();
        let err = grad_check(
            |w| {
                probe.set_flat_values(w)?;
                probe.loss(&batch)
            },
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut m = tiny(BranchMode::Dual);
    randomize(&mut m, 6);
    let bytes = checkpoint::to_bytes(&m);
    assert_eq!(&bytes[..4], b"LFM1");
    let back = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(checkpoint::to_bytes(&back), bytes);

    let mut corrupt = bytes.clone();
    let n = corrupt.len();
    corrupt[n - 20] ^= 0x01;
    assert!(matches!(checkpoint::from_bytes(&corrupt), Err(Error::Integrity(_))));
    assert!(matches!(checkpoint::from_bytes(&bytes[..n - 3]), Err(Error::Integrity(_))));
    assert!(matches!(checkpoint::from_bytes(b"NOPE"), Err(Error::Integrity(_))));

    let same = tiny(BranchMode::Same);
    assert_eq!(checkpoint::from_bytes(&checkpoint::to_bytes(&same)).unwrap(), same);
}

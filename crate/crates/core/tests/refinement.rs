mod common;

use std::collections::{BTreeMap, BTreeSet};

use adcgs_core::canonical::voxel_key;
use adcgs_core::refinement::{grow, grow_candidates, prune, prune_mask, SignificanceAccumulator};
use proptest::prelude::*;
use rand::Rng;

use common::{random_model, rng, small_config};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulator_matches_direct_ratio(
        history in prop::collection::vec(
            prop::collection::vec((0.0f64..1.0, 0.0f64..10.0), 6),
            1..40,
        )
    ) {
        let mut acc = SignificanceAccumulator::new(3, 2);
        for frame in &history {
            let psi: Vec<f64> = frame.iter().map(|p| p.0).collect();
            let g: Vec<f64> = frame.iter().map(|p| p.1).collect();
            acc.record(&psi, &g, &[0.5; 6]).unwrap();
        }
        for p in 0..6 {
            let num: f64 = history.iter().map(|f| f[p].0 * f[p].1).sum();
            let den: f64 = history.iter().map(|f| f[p].0).sum();
            match acc.gradient(p) {
                Some(v) => prop_assert!((v - num / den).abs() <= 1e-12 * (num / den).abs().max(1.0)),
                None => prop_assert_eq!(den, 0.0),
            }
        }
    }

    #[test]
    fn prune_matches_window_max_oracle(
        history in prop::collection::vec(prop::collection::vec(0.0f64..0.1, 12), 1..20),
        tau in 0.0f64..0.1,
    ) {
        let (anchors, k) = (4, 3);
        let mut acc = SignificanceAccumulator::new(anchors, k);
        for o in &history {
            acc.record(&[0.1; 12], &[0.0; 12], o).unwrap();
        }
        let oracle: Vec<bool> = (0..anchors)
            .map(|a| {
                history
                    .iter()
                    .flat_map(|o| o[a * k..(a + 1) * k].iter().copied())
                    .fold(0.0f64, f64::max)
                    >= tau
            })
            .collect();
        match prune_mask(&acc, tau) {
            Ok(mask) => prop_assert_eq!(mask, oracle),
            Err(_) => prop_assert!(oracle.iter().all(|k| !k)),
        }
    }
}

#[test]
fn grow_covers_every_qualifying_primitive_once() {
    let cfg = small_config();
    let mut m = random_model(3, 150, &cfg);
    m.canonical.f_theta.scale_output(40.0);
    let space = &m.canonical;
    let v = space.voxel_size as f32 as f64;
    let prims = space.primitives().unwrap();
    let p = prims.len();
    let mut r = rng(9);
    let mut acc = SignificanceAccumulator::new(space.anchors.len(), space.k);
    for _ in 0..5 {
        let psi: Vec<f64> = (0..p).map(|_| if r.gen_bool(0.8) { r.gen() } else { 0.0 }).collect();
        let g: Vec<f64> = (0..p).map(|_| r.gen_range(0.0..4e-4)).collect();
        acc.record(&psi, &g, &vec![0.5; p]).unwrap();
    }
    let tau = 2e-4;

    // Brute-force dedup: per free voxel, the qualifying primitive with the
    // largest gradient (lowest index on ties).
    let occupied: BTreeSet<[i64; 3]> =
        (0..space.anchors.len()).map(|i| voxel_key(space.anchors.position(i), v)).collect();
    let mut best: BTreeMap<[i64; 3], (f64, usize)> = BTreeMap::new();
    for (i, pr) in prims.iter().enumerate() {
        let Some(g) = acc.gradient(i).filter(|&g| g > tau) else { continue };
        let key = voxel_key(pr.position, v);
        if occupied.contains(&key) {
            continue;
        }
        let e = best.entry(key).or_insert((g, i));
        if g > e.0 {
            *e = (g, i);
        }
    }
    assert!(best.len() > 5, "scene too sparse to exercise growth: {}", best.len());

    let new = grow_candidates(space, &acc, tau).unwrap();
    assert_eq!(new.len(), best.len());
    for a in &new {
        let key = voxel_key(a.position, v);
        let (_, i) = best[&key];
        let parent = space.anchors.anchor(prims[i].anchor_id);
        assert_eq!(a.f_v, parent.f_v);
        assert_eq!(a.f_g, parent.f_g);
        assert_eq!(a.cov, prims[i].cov);
        assert_eq!(a.color, prims[i].color);
    }

    let before = m.canonical.anchors.len();
    let added = grow(&mut m.canonical, &acc, tau).unwrap();
    assert_eq!(m.canonical.anchors.len(), before + added);
    let after: BTreeSet<[i64; 3]> = (0..m.canonical.anchors.len())
        .map(|i| voxel_key(m.canonical.anchors.position(i), v))
        .collect();
    for (i, pr) in prims.iter().enumerate() {
        if acc.gradient(i).is_some_and(|g| g > tau) {
            assert!(after.contains(&voxel_key(pr.position, v)), "primitive {i} left uncovered");
        }
    }
}

#[test]
fn grow_below_threshold_adds_nothing() {
    let cfg = small_config();
    let mut m = random_model(4, 50, &cfg);
    let p = m.canonical.primitive_count();
    let mut acc = SignificanceAccumulator::new(m.canonical.anchors.len(), cfg.k);
    acc.record(&vec![1.0; p], &vec![1e-4; p], &vec![1.0; p]).unwrap();
    assert_eq!(grow(&mut m.canonical, &acc, 2e-4).unwrap(), 0);
}

#[test]
fn prune_removes_exactly_the_dead_anchors() {
    let cfg = small_config();
    let mut m = random_model(5, 60, &cfg);
    let n = m.canonical.anchors.len();
    let k = cfg.k;
    let mut opacity = vec![0.5; n * k];
    let dead = [0usize, 7, n - 1];
    for &a in &dead {
        opacity[a * k..(a + 1) * k].iter_mut().for_each(|o| *o = 0.0);
    }
    let kept_ids: Vec<_> = (0..n).filter(|a| !dead.contains(a)).map(|a| m.canonical.anchors.anchor(a)).collect();
    let mut acc = SignificanceAccumulator::new(n, k);
    acc.record(&vec![0.1; n * k], &vec![0.0; n * k], &opacity).unwrap();
    let mask = prune(&mut m.canonical, &acc, 0.05).unwrap();
    assert_eq!(mask.iter().filter(|k| !**k).count(), dead.len());
    assert_eq!(m.canonical.anchors.len(), n - dead.len());
    for (i, a) in kept_ids.iter().enumerate() {
        assert_eq!(&m.canonical.anchors.anchor(i), a);
    }
}

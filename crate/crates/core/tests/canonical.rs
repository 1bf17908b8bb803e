mod common;

use std::collections::HashSet;

use adcgs_core::canonical::{
    derive_primitives, init_canonical, quantize_to_voxel, voxel_key, Anchor, CanonicalSpace, PRIMITIVE_ATTRS,
};
use adcgs_core::{CoreError, ModelConfig};
use proptest::prelude::*;
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn space(seed: u64, points: &[[f64; 3]], voxel: f64, cfg: &ModelConfig) -> CanonicalSpace<f64> {
    init_canonical(points, voxel, cfg, &mut common::rng(seed)).unwrap()
}

fn random_anchor(r: &mut impl Rng, cfg: &ModelConfig) -> Anchor {
    Anchor {
        position: std::array::from_fn(|_| r.gen_range(-1.0..1.0)),
        cov: std::array::from_fn(|_| r.gen_range(-2.0..0.5)),
        color: std::array::from_fn(|_| r.gen()),
        f_v: (0..cfg.n_v).map(|_| r.gen_range(-1.0..1.0)).collect(),
        f_g: (0..cfg.f_g_len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn cube_corners_give_eight_anchors() {
    let v = 0.25;
    let pts: Vec<[f64; 3]> = (0..8)
        .map(|i| std::array::from_fn(|a| if i >> a & 1 == 1 { 1.5 * v } else { -0.5 * v }))
        .collect();
    let s = space(1, &pts, v, &common::small_config());
    assert_eq!(s.anchors.len(), 8);
}

#[test]
fn coincident_points_give_one_anchor() {
    let s = space(1, &[[0.3, -0.2, 0.7]; 100], 0.1, &common::small_config());
    assert_eq!(s.anchors.len(), 1);
    assert_eq!(s.primitive_count(), common::small_config().k);
}

#[test]
fn anchor_count_matches_voxel_hashing() {
    let pts = common::random_points(9, 1000, 1.0);
    for voxel in [0.05, 0.1, 0.2, 0.5, 1.0] {
        let want: HashSet<[i64; 3]> = pts.iter().map(|p| p.map(|x| (x / voxel as f32 as f64).floor() as i64)).collect();
        let s = space(2, &pts, voxel, &common::small_config());
        assert_eq!(s.anchors.len(), want.len(), "voxel {voxel}");
        for i in 0..s.anchors.len() {
            let p = s.anchors.position(i);
            assert_eq!(quantize_to_voxel(p, voxel), p, "anchor {i} is off the grid");
            assert!(want.contains(&voxel_key(p, voxel)));
        }
    }
}

#[test]
fn bad_point_clouds_are_rejected() {
    let cfg = common::small_config();
    let mut r = common::rng(0);
    assert!(matches!(init_canonical::<f64, _>(&[], 0.1, &cfg, &mut r), Err(CoreError::Init(_))));
    assert!(matches!(init_canonical::<f64, _>(&[[0.0; 3]], 0.0, &cfg, &mut r), Err(CoreError::Init(_))));
    assert!(matches!(
        init_canonical::<f64, _>(&[[f64::NAN, 0.0, 0.0]], 0.1, &cfg, &mut r),
        Err(CoreError::Init(_))
    ));
}

#[test]
fn zero_prediction_network_copies_anchor_attributes() {
    let cfg = common::small_config();
    let mut s = space(3, &common::random_points(3, 50, 1.0), 0.2, &cfg);
    s.f_theta.scale_output(0.0);
    let prims = s.primitives().unwrap();
    assert_eq!(prims.len(), s.anchors.len() * cfg.k);
    for p in &prims {
        let a = s.anchors.anchor(p.anchor_id);
        assert_eq!(p.position, a.position);
        assert_eq!(p.cov, a.cov);
        assert_eq!(p.color, a.color);
        assert_eq!(p.opacity, 0.5);
    }
}

#[test]
fn single_slot_position_residual_is_additive() {
    let cfg = ModelConfig { k: 1, ..common::small_config() };
    let mut s = space(4, &[[0.1, 0.2, 0.3]], 0.2, &cfg);
    s.f_theta.scale_output(0.0);
    let last = s.f_theta.spec.layers() - 1;
    s.f_theta.bias_mut(last).data_mut()[0] = 0.1;
    let a = s.anchors.anchor(0);
    let p = &derive_primitives(&a, &s.f_theta, 1).unwrap()[0];
    assert_eq!(p.position, [a.position[0] + 0.1, a.position[1], a.position[2]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn primitives_match_formula_oracle(seed in 0u64..10_000) {
        let cfg = common::small_config();
        let mut r = common::rng(seed);
        let s = space(seed, &[[0.0; 3]], 0.2, &cfg);
        let mut theta = s.f_theta.clone();
        for w in theta.weights.iter_mut().chain(theta.biases.iter_mut()) {
            for v in w.data_mut() {
                *v = r.gen_range(-0.5..0.5);
            }
        }
        let a = random_anchor(&mut r, &cfg);
        let got = derive_primitives(&a, &theta, cfg.k).unwrap();
        let x: Vec<f64> = a.f_v.iter().chain(&a.f_g).copied().collect();
        let out = common::mlp_oracle(&theta, &x);
        prop_assert_eq!(got.len(), cfg.k);
        for (k, p) in got.iter().enumerate() {
            let o = &out[k * PRIMITIVE_ATTRS..(k + 1) * PRIMITIVE_ATTRS];
            for i in 0..3 {
                prop_assert!((p.position[i] - (a.position[i] + o[i])).abs() < 1e-12);
                prop_assert!((p.color[i] - (a.color[i] + o[9 + i]).clamp(0.0, 1.0)).abs() < 1e-12);
            }
            for i in 0..6 {
                prop_assert!((p.cov[i] - (a.cov[i] + o[3 + i])).abs() < 1e-12);
            }
            prop_assert!((p.opacity - sigmoid(o[12])).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&p.opacity));
        }
        prop_assert_eq!(derive_primitives(&a, &theta, cfg.k).unwrap(), got);
    }
}

mod common;

use adcgs_core::canonical::NeuralPrimitive;
use adcgs_core::config::{TimeMode, PE_DIM, TIME_GRID};
use adcgs_core::deformation::{
    coarse_deform, compose, fine_deform, positional_embedding, time_embedding, CoarseDeformation,
    DeformationNets, FineDeformation,
};
use adcgs_core::model::{Model, Stages};
use adcgs_core::{CoreError, ModelConfig};
use proptest::prelude::*;
use rand::Rng;

fn nets(seed: u64, cfg: &ModelConfig) -> DeformationNets<f64> {
    DeformationNets::new(cfg, &mut common::rng(seed)).unwrap()
}

/// Randomise every output layer so the networks produce non-zero values.
fn perturb(n: &mut DeformationNets<f64>, r: &mut impl Rng) {
    for mlp in [&mut n.f_omega, &mut n.f_varpi] {
        let last = mlp.spec.layers() - 1;
        for v in mlp.weights[last].data_mut().iter_mut().chain(mlp.biases[last].data_mut()) {
            *v = r.gen_range(-0.3..0.3);
        }
    }
}

fn random_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

#[test]
fn constant_grid_interpolates_to_the_constant() {
    let cfg = common::small_config();
    let mut n = nets(1, &cfg);
    n.z.data_mut().fill(0.37);
    let (at0, _) = time_embedding(&n, 0.0).unwrap();
    for t in [0.1, 0.5, 0.73, 1.0] {
        assert_eq!(time_embedding(&n, t).unwrap().0.len(), at0.len());
    }
    // f_s sees (Interp(Z), t), so compare against its oracle at each t.
    for t in [0.0, 0.25, 0.9] {
        let want = common::mlp_oracle(&n.f_s, &[0.37, t]);
        let (got, _) = time_embedding(&n, t).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_endpoints_and_midpoint() {
    let cfg = common::small_config();
    let mut n = nets(2, &cfg);
    let mut r = common::rng(2);
    for v in n.z.data_mut() {
        *v = r.gen_range(-1.0..1.0);
    }
    let z = n.z.data().to_vec();
    let check = |t: f64, interp: f64| {
        let want = common::mlp_oracle(&n.f_s, &[interp, t]);
        let (got, _) = time_embedding(&n, t).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "t = {t}");
        }
    };
    check(0.0, z[0]);
    check(1.0, z[TIME_GRID - 1]);
    // t·255 = 127.5 between entries 127 and 128.
    check(0.5, z[127] + 0.5 * (z[128] - z[127]));
}

#[test]
fn out_of_range_time_by_mode() {
    let cfg = common::small_config();
    let mut n = nets(3, &cfg);
    let (a, warned) = time_embedding(&n, 1.5).unwrap();
    assert!(warned);
    assert_eq!(a, time_embedding(&n, 1.0).unwrap().0);
    n.time_mode = TimeMode::Pedantic;
    assert!(matches!(time_embedding(&n, -0.1), Err(CoreError::Config(_))));
    assert!(matches!(time_embedding(&n, f64::NAN), Err(CoreError::Config(_))));
}

#[test]
fn positional_embedding_special_cases() {
    let z = positional_embedding([0.0; 3]);
    for pair in z.chunks(2) {
        assert_eq!(pair, [0.0, 1.0]);
    }
    let p = positional_embedding([std::f64::consts::PI, 0.0, 0.0]);
    assert!(p[0].abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn positional_embedding_matches_trig(x in prop::array::uniform3(-3.0f64..3.0)) {
        let e = positional_embedding(x);
        prop_assert_eq!(e.len(), PE_DIM);
        let bands = PE_DIM / 6;
        for a in 0..3 {
            for l in 0..bands {
                let f = 2f64.powi(l as i32);
                prop_assert!((e[a * bands * 2 + 2 * l] - (f * x[a]).sin()).abs() < 1e-12);
                prop_assert!((e[a * bands * 2 + 2 * l + 1] - (f * x[a]).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coarse_and_fine_match_mlp_oracle(seed in 0u64..10_000) {
        let cfg = common::small_config();
        let mut r = common::rng(seed);
        let mut n = nets(seed, &cfg);
        perturb(&mut n, &mut r);
        let (f_t, _) = time_embedding(&n, r.gen()).unwrap();
        let f_v = random_vec(&mut r, cfg.n_v);
        let c = coarse_deform(0, &f_v, &f_t, &n).unwrap();
        let x: Vec<f64> = f_v.iter().chain(&f_t).copied().collect();
        let want = common::mlp_oracle(&n.f_omega, &x);
        let got: Vec<f64> = c.d_position.iter().chain(&c.d_cov).chain(&c.d_color).copied().collect();
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let p: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let f_p = positional_embedding(p);
        let fine = fine_deform(&f_p, &f_t, &n).unwrap();
        prop_assert_eq!(fine.len(), cfg.k);
        for (slot, fd) in fine.iter().enumerate() {
            let mut x: Vec<f64> = f_p.iter().chain(&f_t).copied().collect();
            x.extend((0..cfg.k).map(|j| if j == slot { 1.0 } else { 0.0 }));
            let want = common::mlp_oracle(&n.f_varpi, &x);
            prop_assert!((fd.d_opacity - want[0]).abs() < 1e-12);
            for i in 0..3 {
                prop_assert!((fd.d_color[i] - want[1 + i]).abs() < 1e-12);
            }
        }
        prop_assert!(fine.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn compose_matches_arithmetic(seed in 0u64..10_000) {
        let mut r = common::rng(seed);
        let mut v = |n| random_vec(&mut r, n);
        let p = NeuralPrimitive {
            anchor_id: 3,
            position: v(3).try_into().unwrap(),
            cov: v(6).try_into().unwrap(),
            color: v(3).iter().map(|x| x.abs()).collect::<Vec<_>>().try_into().unwrap(),
            opacity: v(1)[0].abs(),
        };
        let c = CoarseDeformation {
            anchor_id: 3,
            d_position: v(3).try_into().unwrap(),
            d_cov: v(6).try_into().unwrap(),
            d_color: v(3).iter().map(|x| 0.3 * x).collect::<Vec<_>>().try_into().unwrap(),
        };
        let f = FineDeformation { d_opacity: 0.4 * v(1)[0], d_color: v(3).iter().map(|x| 0.2 * x).collect::<Vec<_>>().try_into().unwrap() };
        let d = compose(&p, &c, &f).unwrap();
        for i in 0..3 {
            prop_assert!((d.position[i] - (p.position[i] + c.d_position[i])).abs() < 1e-12);
            prop_assert!((d.color[i] - (p.color[i] + c.d_color[i] + f.d_color[i]).clamp(0.0, 1.0)).abs() < 1e-12);
        }
        for i in 0..6 {
            prop_assert!((d.cov[i] - (p.cov[i] + c.d_cov[i])).abs() < 1e-12);
        }
        prop_assert!((d.opacity - (p.opacity + f.d_opacity).clamp(0.0, 1.0)).abs() < 1e-12);
    }
}

#[test]
fn zero_networks_are_the_identity() {
    let cfg = common::small_config();
    let n = nets(5, &cfg);
    let (f_t, _) = time_embedding(&n, 0.4).unwrap();
    let c = coarse_deform(0, &vec![0.3; cfg.n_v], &f_t, &n).unwrap();
    assert_eq!((c.d_position, c.d_cov, c.d_color), ([0.0; 3], [0.0; 6], [0.0; 3]));
    for f in fine_deform(&positional_embedding([0.1, 0.2, 0.3]), &f_t, &n).unwrap() {
        assert_eq!((f.d_opacity, f.d_color), (0.0, [0.0; 3]));
    }
    let p = NeuralPrimitive {
        anchor_id: 0,
        position: [0.1, 0.2, 0.3],
        cov: [-1.0, -1.1, -1.2, 0.1, 0.2, 0.3],
        color: [0.2, 0.4, 0.6],
        opacity: 0.7,
    };
    let d = compose(&p, &c, &FineDeformation { d_opacity: 0.0, d_color: [0.0; 3] }).unwrap();
    assert_eq!((d.position, d.cov, d.color, d.opacity), (p.position, p.cov, p.color, p.opacity));
}

#[test]
fn identical_features_deform_identically() {
    let cfg = common::small_config();
    let mut n = nets(6, &cfg);
    perturb(&mut n, &mut common::rng(6));
    let (f_t, _) = time_embedding(&n, 0.6).unwrap();
    let f_v = vec![0.25; cfg.n_v];
    assert_eq!(
        coarse_deform(0, &f_v, &f_t, &n).unwrap().d_position,
        coarse_deform(1, &f_v, &f_t, &n).unwrap().d_position
    );
}

#[test]
fn mismatched_anchor_is_a_contract_error() {
    let p = NeuralPrimitive { anchor_id: 1, position: [0.0; 3], cov: [0.0; 6], color: [0.0; 3], opacity: 0.5 };
    let c = CoarseDeformation { anchor_id: 2, d_position: [0.0; 3], d_cov: [0.0; 6], d_color: [0.0; 3] };
    let f = FineDeformation { d_opacity: 0.0, d_color: [0.0; 3] };
    assert!(matches!(compose(&p, &c, &f), Err(CoreError::Contract(_))));
}

#[test]
fn unit_anchor_shift_moves_every_primitive() {
    let cfg = common::small_config();
    let mut m: Model<f64> = common::random_model(7, 60, &cfg).cast();
    m.stages = Stages::COARSE;
    let base = m.canonical.primitives().unwrap();
    let om = &mut m.deformation.f_omega;
    om.scale_output(0.0);
    let last = om.spec.layers() - 1;
    om.bias_mut(last).data_mut()[0] = 1.0;
    let moved = m.deformed_primitives(0.3).unwrap();
    assert_eq!(moved.len(), base.len());
    for (a, b) in base.iter().zip(&moved) {
        assert_eq!(b.position, [a.position[0] + 1.0, a.position[1], a.position[2]]);
    }
}

#[test]
fn primitives_of_one_anchor_share_the_coarse_motion() {
    let cfg = common::small_config();
    let mut m: Model<f64> = common::random_model(8, 80, &cfg).cast();
    m.stages = Stages::COARSE;
    perturb(&mut m.deformation, &mut common::rng(8));
    let base = m.canonical.primitives().unwrap();
    for t in [0.0, 0.35, 1.0] {
        let d = m.deformed_primitives(t).unwrap();
        for (chunk_b, chunk_d) in base.chunks(cfg.k).zip(d.chunks(cfg.k)) {
            let shift = |i: usize| -> [f64; 9] {
                std::array::from_fn(|j| {
                    if j < 3 {
                        chunk_d[i].position[j] - chunk_b[i].position[j]
                    } else {
                        chunk_d[i].cov[j - 3] - chunk_b[i].cov[j - 3]
                    }
                })
            };
            let s0 = shift(0);
            for i in 1..cfg.k {
                for (a, b) in shift(i).iter().zip(&s0) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn counters_track_anchor_and_primitive_rows() {
    let cfg = common::small_config();
    let m = common::random_model(9, 100, &cfg);
    m.deformation.counters.reset();
    m.deformed_primitives(0.5).unwrap();
    assert_eq!(m.deformation.counters.coarse(), m.anchor_count() as u64);
    assert_eq!(m.deformation.counters.fine(), (m.anchor_count() * cfg.k) as u64);
    let again = m.deformed_primitives(0.5).unwrap();
    assert_eq!(again, m.deformed_primitives(0.5).unwrap());
}

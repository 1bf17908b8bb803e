mod common;

use adcgs_core::codec::container::encode_model;
use adcgs_core::model::Stages;
use adcgs_core::trainer::{loss, train, write_csv, Trainer, TrainingConfig, TrainingView};
use adcgs_core::workbench::{generate_scene, SceneDataset, SceneSpec, Split};
use adcgs_core::CoreError;
use rand::Rng;

fn tiny_data() -> SceneDataset {
    let mut spec = SceneSpec::standard("two-blobs-orbit", 16).unwrap();
    spec.frames = 3;
    spec.points_per_blob = 60;
    generate_scene(&spec).unwrap()
}

fn tiny_config(iters: usize) -> TrainingConfig {
    TrainingConfig {
        total_iterations: iters,
        refine_interval: 4,
        voxel_size: 0.15,
        model: common::small_config(),
        ..TrainingConfig::default()
    }
}

#[test]
fn loss_matches_hand_computed_terms() {
    let (w, h) = (13, 12);
    let mut r = common::rng(4);
    let a: Vec<f64> = (0..w * h * 3).map(|_| r.gen()).collect();
    let b: Vec<f64> = a.iter().map(|v| (v + r.gen_range(-0.2..0.2f64)).clamp(0.0, 1.0)).collect();
    let l1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let s = adcgs_core::metrics::ssim(&a, &b, w, h).unwrap();
    let (ls, le, rate) = (0.2, 1e-3, 3.5);
    let want = 0.8 * l1 + 0.2 * (1.0 - s) + le * rate;
    let got = loss(&a, &b, w, h, rate, ls, le).unwrap();
    assert!((got.total - want).abs() < 1e-6);
    assert!((got.l1 - l1).abs() < 1e-12);
}

#[test]
fn zero_iterations_returns_the_initial_model() {
    let d = tiny_data();
    let views = d.views(Split::Train);
    let out = train(&views, &d.manifest.init_points, &tiny_config(0)).unwrap();
    assert!(out.log.is_empty() && out.events.is_empty());
    assert_eq!(out.model.stages, Stages::CANONICAL);
    let fresh = Trainer::new(&views, &d.manifest.init_points, &tiny_config(0)).unwrap();
    assert_eq!(out.model.anchor_count(), fresh.model.anchor_count());
}

#[test]
fn training_is_deterministic() {
    let d = tiny_data();
    let views = d.views(Split::Train);
    let cfg = tiny_config(40);
    let run = || {
        let out = train(&views, &d.manifest.init_points, &cfg).unwrap();
        let mut csv = Vec::new();
        write_csv(&mut csv, &out.log).unwrap();
        (csv, encode_model(&out.model, cfg.lambda_e).unwrap().bytes)
    };
    assert_eq!(run(), run());
}

#[test]
fn phases_follow_the_milestones() {
    let d = tiny_data();
    let views = d.views(Split::Train);
    let cfg = tiny_config(40);
    let ms = cfg.milestones();
    let mut t = Trainer::new(&views, &d.manifest.init_points, &cfg).unwrap();
    let mut anchors = t.model.anchor_count();
    let mut refine_iters = Vec::new();
    while t.iteration() < cfg.total_iterations {
        let before = t.iteration();
        assert_eq!(t.stages() == Stages::CANONICAL, before < ms.deform_start);
        let row = t.step().unwrap();
        assert_eq!(row.rate_bits > 0.0, before >= ms.rd_start, "iteration {}", row.iteration);
        assert!(row.total_loss.is_finite());
        let now = t.model.anchor_count();
        let scheduled = t.iteration() > ms.refine_start
            && t.iteration() <= ms.refine_end
            && (t.iteration() - ms.refine_start) % cfg.refine_interval == 0;
        if scheduled {
            refine_iters.push(t.iteration());
        } else {
            assert_eq!(now, anchors, "anchor count changed outside refinement");
        }
        anchors = now;
    }
    let ev: Vec<usize> = t.events().iter().map(|e| e.iteration).collect();
    assert_eq!(ev, refine_iters);
    assert!(!ev.is_empty());
    for e in t.events() {
        assert!(e.anchors > 0);
    }
}

#[test]
fn non_finite_target_is_a_numeric_error_with_snapshot() {
    let d = tiny_data();
    let mut views: Vec<TrainingView> = d.views(Split::Train);
    for v in &mut views {
        v.image[0] = f64::NAN;
    }
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("nan.ckpt");
    let t = Trainer::new(&views, &d.manifest.init_points, &tiny_config(5))
        .unwrap()
        .with_diagnostics(snap.clone());
    let r = t.run(&mut |_| {});
    assert!(matches!(r, Err(CoreError::Numeric(_))));
    assert!(snap.exists());
}

#[test]
fn bad_inputs_are_rejected() {
    let d = tiny_data();
    let views = d.views(Split::Train);
    assert!(matches!(
        Trainer::new(&[], &d.manifest.init_points, &tiny_config(5)),
        Err(CoreError::Data(_))
    ));
    let mut short = views.clone();
    short[0].image.pop();
    assert!(matches!(
        Trainer::new(&short, &d.manifest.init_points, &tiny_config(5)),
        Err(CoreError::Data(_))
    ));
    assert!(matches!(
        TrainingConfig::from_json(r#"{"lambda_e": -1.0}"#),
        Err(CoreError::Config(_))
    ));
    assert!(matches!(
        TrainingConfig::from_json(r#"{"learning_rate": 1.0}"#),
        Err(CoreError::Config(_))
    ));
}

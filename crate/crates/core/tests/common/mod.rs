#![allow(dead_code)]

use adcgs_core::model::{Model, Stages};
use adcgs_core::renderer::{Camera, Splat2D};
use adcgs_core::ModelConfig;
use adcgs_tensor::Parameters;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` random anisotropic splats inside a `w × h` screen.
pub fn random_splats(seed: u64, n: usize, w: usize, h: usize) -> Vec<Splat2D> {
    let mut r = rng(seed);
    (0..n)
        .map(|id| {
            let sx: f64 = r.gen_range(1.0..6.0);
            let sy: f64 = r.gen_range(1.0..6.0);
            let th: f64 = r.gen_range(0.0..std::f64::consts::PI);
            let (c, s) = (th.cos(), th.sin());
            let a = c * c * sx * sx + s * s * sy * sy;
            let b = c * s * (sx * sx - sy * sy);
            let cc = s * s * sx * sx + c * c * sy * sy;
            Splat2D {
                mean: [r.gen_range(0.0..w as f64), r.gen_range(0.0..h as f64)],
                cov: [a + 0.3, b, cc + 0.3],
                depth: r.gen_range(1.0..10.0),
                color: [r.gen(), r.gen(), r.gen()],
                opacity: r.gen_range(0.2..0.95),
                id,
            }
        })
        .collect()
}

/// `n` points uniform in the cube `[-extent, extent]³`.
pub fn random_points(seed: u64, n: usize, extent: f64) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| r.gen_range(-extent..extent)))
        .collect()
}

/// A model with perturbed networks and spread-out anchor attributes, so
/// every coded stream carries non-trivial symbols.
pub fn random_model(seed: u64, points: usize, cfg: &ModelConfig) -> Model<f32> {
    let mut r = rng(seed);
    let pts = random_points(seed ^ 0x5eed, points, 1.0);
    let mut m = Model::<f32>::new(&pts, 2.0 / 64.0, cfg, &mut r).unwrap();
    m.stages = Stages::FULL;
    m.visit_mut(&mut |name, t| {
        let scale = match name {
            "anchor.position" => return,
            "anchor.f_v" | "anchor.f_g" => 0.5,
            "anchor.cov" | "anchor.color" => 0.1,
            _ => 0.05,
        };
        for v in t.data_mut() {
            let z: f64 = r.sample(rand_distr::StandardNormal);
            *v += (z * scale) as f32;
        }
    });
    m
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        k: 4,
        n_v: 8,
        n_g: 4,
        m: 4,
        theta_hidden: 16,
        deform_hidden: 16,
        time_hidden: 16,
        entropy_hidden: 16,
        hyper_dim: 4,
        ..ModelConfig::default()
    }
}

pub fn test_camera(w: usize, h: usize) -> Camera {
    Camera::look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 40.0, w, h).unwrap()
}

/// Fit every entropy head to its data: zero output weights, per-channel
/// mean and `log σ` biases from the coded values.
pub fn calibrate_entropy_heads(m: &mut Model<f32>) {
    let a = m.canonical.anchors.clone();
    for (head, data) in [
        (&mut m.mem.e_fv, &a.f_v),
        (&mut m.mem.e_cov, &a.cov),
        (&mut m.mem.e_color, &a.color),
        (&mut m.mem.e_fg, &a.f_g),
    ] {
        head.scale_output(0.0);
        let last = head.spec.layers() - 1;
        let w = head.spec.output_width() / 2;
        let (rows, cols) = (data.rows(), data.cols());
        let b = head.bias_mut(last).data_mut();
        for j in 0..w {
            // f_g heads serve every chunk; channel j of each chunk is pooled.
            let vals: Vec<f64> = (0..rows)
                .flat_map(|r| (j..cols).step_by(w).map(move |c| (r, c)))
                .map(|(r, c)| data.data()[r * cols + c] as f64)
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            b[j] = mean as f32;
            b[w + j] = (0.5 * var.max(1e-12).ln()) as f32;
        }
    }
}

/// Plain f64 forward of an MLP straight from its weight tables.
pub fn mlp_oracle<T: adcgs_tensor::Real>(mlp: &adcgs_tensor::Mlp<T>, x: &[f64]) -> Vec<f64> {
    use adcgs_tensor::Activation;
    let mut h = x.to_vec();
    let layers = mlp.spec.layers();
    for l in 0..layers {
        let (i, o) = (mlp.spec.layer_widths[l], mlp.spec.layer_widths[l + 1]);
        let w = mlp.weights[l].data();
        let b = mlp.biases[l].data();
        let mut y: Vec<f64> = (0..o)
            .map(|c| b[c].f64() + (0..i).map(|r| h[r] * w[r * o + c].f64()).sum::<f64>())
            .collect();
        if l + 1 < layers {
            for v in &mut y {
                *v = match mlp.spec.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
            if mlp.spec.is_skip(l) {
                for (v, r) in y.iter_mut().zip(&h) {
                    *v += r;
                }
            }
        }
        h = y;
    }
    h
}

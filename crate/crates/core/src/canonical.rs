//! Anchor storage, initialization from a point cloud, and derivation of the
//! K neural primitives of every anchor.

use std::collections::BTreeSet;

use adcgs_tensor::{Activation, Graph, Mlp, MlpSpec, NodeId, Parameters, Real, Tensor};
use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};

/// Per-primitive output width of the prediction network: ΔX, ΔΣ, ΔC, opacity.
pub const PRIMITIVE_ATTRS: usize = 3 + 6 + 3 + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub position: [f64; 3],
    pub cov: [f64; 6],
    pub color: [f64; 3],
    pub f_v: Vec<f64>,
    pub f_g: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPrimitive {
    pub anchor_id: usize,
    pub position: [f64; 3],
    pub cov: [f64; 6],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Struct-of-arrays anchor table, one row per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<T> {
    /// `[A, 3]`, fixed on the voxel grid.
    pub positions: Tensor<T>,
    /// `[A, 6]`: three log-scales then an axis-angle rotation.
    pub cov: Tensor<T>,
    /// `[A, 3]`
    pub color: Tensor<T>,
    /// `[A, N_v]`
    pub f_v: Tensor<T>,
    /// `[A, K·N_g]`
    pub f_g: Tensor<T>,
}

impl<T: Real> AnchorSet<T> {
    pub fn empty(n_v: usize, f_g_len: usize) -> Self {
        Self {
            positions: Tensor::zeros(&[0, 3]),
            cov: Tensor::zeros(&[0, 6]).param(),
            color: Tensor::zeros(&[0, 3]).param(),
            f_v: Tensor::zeros(&[0, n_v]).param(),
            f_g: Tensor::zeros(&[0, f_g_len]).param(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn anchor(&self, i: usize) -> Anchor {
        let f = |t: &Tensor<T>| t.row(i).iter().map(|v| v.f64()).collect::<Vec<f64>>();
        let p = f(&self.positions);
        let c = f(&self.cov);
        let col = f(&self.color);
        Anchor {
            position: [p[0], p[1], p[2]],
            cov: std::array::from_fn(|j| c[j]),
            color: [col[0], col[1], col[2]],
            f_v: f(&self.f_v),
            f_g: f(&self.f_g),
        }
    }

    pub fn push(&mut self, a: &Anchor) -> Result<()> {
        let c = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        self.positions.push_rows(&c(&a.position))?;
        self.cov.push_rows(&c(&a.cov))?;
        self.color.push_rows(&c(&a.color))?;
        self.f_v.push_rows(&c(&a.f_v))?;
        self.f_g.push_rows(&c(&a.f_g))?;
        Ok(())
    }

    pub fn retain(&mut self, keep: &[bool]) {
        self.visit_all_mut(&mut |t| t.retain_rows(keep));
    }

    /// Reorder so that new row `i` is old row `order[i]`.
    pub fn permute(&mut self, order: &[usize]) {
        self.visit_all_mut(&mut |t| t.permute_rows(order));
    }

    fn visit_all_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        f(&mut self.positions);
        f(&mut self.cov);
        f(&mut self.color);
        f(&mut self.f_v);
        f(&mut self.f_g);
    }

    pub fn cast<U: Real>(&self) -> AnchorSet<U> {
        AnchorSet {
            positions: self.positions.cast(),
            cov: self.cov.cast(),
            color: self.color.cast(),
            f_v: self.f_v.cast(),
            f_g: self.f_g.cast(),
        }
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        let r = self.positions.row(i);
        [r[0].f64(), r[1].f64(), r[2].f64()]
    }
}

impl<T: Real> Parameters<T> for AnchorSet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("anchor.position", &self.positions);
        f("anchor.cov", &self.cov);
        f("anchor.color", &self.color);
        f("anchor.f_v", &self.f_v);
        f("anchor.f_g", &self.f_g);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("anchor.position", &mut self.positions);
        f("anchor.cov", &mut self.cov);
        f("anchor.color", &mut self.color);
        f("anchor.f_v", &mut self.f_v);
        f("anchor.f_g", &mut self.f_g);
    }
}

/// Integer voxel index of a world position.
pub fn voxel_key(p: [f64; 3], voxel_size: f64) -> [i64; 3] {
    p.map(|x| (x / voxel_size).floor() as i64)
}

/// World-space centre of a voxel. `voxel_size` is rounded to `f32` first so
/// every stage that stores it as `f32` reproduces the same centres.
pub fn voxel_center(key: [i64; 3], voxel_size: f64) -> [f64; 3] {
    let v = voxel_size as f32 as f64;
    key.map(|i| (i as f64 + 0.5) * v)
}

pub fn quantize_to_voxel(p: [f64; 3], voxel_size: f64) -> [f64; 3] {
    let v = voxel_size as f32 as f64;
    voxel_center(voxel_key(p, v), v)
}

/// Canonical space at t = 0: anchors plus the prediction network.
#[derive(Debug, Clone)]
pub struct CanonicalSpace<T> {
    pub anchors: AnchorSet<T>,
    pub f_theta: Mlp<T>,
    pub voxel_size: f64,
    pub k: usize,
}

pub fn f_theta_spec(cfg: &ModelConfig) -> Result<MlpSpec> {
    Ok(MlpSpec::new(
        vec![
            cfg.n_v + cfg.f_g_len(),
            cfg.theta_hidden,
            cfg.theta_hidden,
            cfg.k * PRIMITIVE_ATTRS,
        ],
        Activation::Relu,
        true,
    )?)
}

pub fn init_canonical<T: Real, R: Rng + ?Sized>(
    points: &[[f64; 3]],
    voxel_size: f64,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<CanonicalSpace<T>> {
    if points.is_empty() {
        return Err(CoreError::Init("point cloud is empty".into()));
    }
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(CoreError::Init(format!("voxel size must be positive, got {voxel_size}")));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(CoreError::Init("point cloud contains non-finite coordinates".into()));
    }
    cfg.validate()?;
    let v = voxel_size as f32 as f64;
    let keys: BTreeSet<[i64; 3]> = points.iter().map(|&p| voxel_key(p, v)).collect();
    let centers: Vec<[f64; 3]> = keys.iter().map(|&k| voxel_center(k, v)).collect();
    let log_scales = neighbour_log_scales(&centers, v);

    let a = centers.len();
    let mut anchors = AnchorSet::<T>::empty(cfg.n_v, cfg.f_g_len());
    anchors.positions = Tensor::new(
        vec![a, 3],
        centers.iter().flatten().map(|&x| T::of(x)).collect(),
    )?;
    let mut cov = Vec::with_capacity(a * 6);
    for &s in &log_scales {
        cov.extend([s, s, s, 0.0, 0.0, 0.0].map(T::of));
    }
    anchors.cov = Tensor::new(vec![a, 6], cov)?.param();
    anchors.color = Tensor::full(&[a, 3], T::of(0.5)).param();
    anchors.f_v = Tensor::randn(&[a, cfg.n_v], 0.01, rng).param();
    anchors.f_g = Tensor::randn(&[a, cfg.f_g_len()], 0.01, rng).param();

    let mut f_theta = Mlp::new("f_theta", f_theta_spec(cfg)?, rng)?;
    init_theta_output(&mut f_theta, cfg.k, v, rng);
    Ok(CanonicalSpace {
        anchors,
        f_theta,
        voxel_size: v,
        k: cfg.k,
    })
}

/// Output layer starts at zero weights; biases spread the K position
/// offsets inside the voxel and halve the scale so the primitives tile it.
fn init_theta_output<T: Real, R: Rng + ?Sized>(mlp: &mut Mlp<T>, k: usize, voxel: f64, rng: &mut R) {
    mlp.scale_output(0.0);
    let last = mlp.spec.layers() - 1;
    let b = mlp.bias_mut(last);
    for slot in 0..k {
        let row = &mut b.data_mut()[slot * PRIMITIVE_ATTRS..(slot + 1) * PRIMITIVE_ATTRS];
        for v in row.iter_mut().take(3) {
            *v = T::of(rng.gen_range(-0.5..0.5) * voxel);
        }
        for v in row.iter_mut().skip(3).take(3) {
            *v = T::of(-(2.0f64).ln());
        }
    }
}

/// Log of the mean distance to the three nearest other anchors (the voxel
/// size when there are fewer than two anchors).
fn neighbour_log_scales(centers: &[[f64; 3]], voxel: f64) -> Vec<f64> {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut best = [f64::INFINITY; 3];
            for (j, o) in centers.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2) + (c[2] - o[2]).powi(2)).sqrt();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                voxel.ln()
            } else {
                (found.iter().sum::<f64>() / found.len() as f64).ln()
            }
        })
        .collect()
}

/// Anchor attribute nodes `[A, ·]` of one graph.
#[derive(Debug, Clone, Copy)]
pub struct AnchorNodes {
    pub position: NodeId,
    pub cov: NodeId,
    pub color: NodeId,
    pub f_v: NodeId,
    pub f_g: NodeId,
}

/// Per-primitive attribute nodes `[P, ·]`, `P = K·A`, primitive `p` belongs
/// to anchor `p / K`.
#[derive(Debug, Clone, Copy)]
pub struct PrimitiveNodes {
    pub position: NodeId,
    pub cov: NodeId,
    pub color: NodeId,
    pub opacity: NodeId,
}

pub fn anchor_index(anchors: usize, k: usize) -> Vec<usize> {
    (0..anchors * k).map(|p| p / k).collect()
}

/// Residual prediction for every anchor in one network evaluation.
pub fn derive_nodes<T: Real>(
    g: &mut Graph<T>,
    f_theta: &Mlp<T>,
    a: &AnchorNodes,
    k: usize,
) -> Result<PrimitiveNodes> {
    let n = g.value(a.f_v).rows();
    if f_theta.spec.output_width() != k * PRIMITIVE_ATTRS {
        return Err(CoreError::Config(format!(
            "prediction network outputs {} values, expected {} for K={k}",
            f_theta.spec.output_width(),
            k * PRIMITIVE_ATTRS
        )));
    }
    let feat_w = g.value(a.f_v).cols() + g.value(a.f_g).cols();
    if f_theta.spec.input_width() != feat_w {
        return Err(CoreError::Config(format!(
            "prediction network takes {} inputs, anchor features have {feat_w}",
            f_theta.spec.input_width()
        )));
    }
    let x = g.concat_cols(&[a.f_v, a.f_g])?;
    let out = f_theta.forward(g, x)?;
    let out = g.reshape(out, vec![n * k, PRIMITIVE_ATTRS])?;
    let d_x = g.slice_cols(out, 0, 3)?;
    let d_s = g.slice_cols(out, 3, 9)?;
    let d_c = g.slice_cols(out, 9, 12)?;
    let raw_o = g.slice_cols(out, 12, 13)?;
    let idx = anchor_index(n, k);
    let pa = g.gather_rows(a.position, idx.clone())?;
    let sa = g.gather_rows(a.cov, idx.clone())?;
    let ca = g.gather_rows(a.color, idx)?;
    let position = g.add(pa, d_x)?;
    let cov = g.add(sa, d_s)?;
    let c = g.add(ca, d_c)?;
    let color = g.clamp(c, Some(T::zero()), Some(T::one()));
    let opacity = g.sigmoid(raw_o);
    Ok(PrimitiveNodes {
        position,
        cov,
        color,
        opacity,
    })
}

pub fn anchor_nodes_input<T: Real>(g: &mut Graph<T>, a: &AnchorSet<T>) -> AnchorNodes {
    AnchorNodes {
        position: g.input(a.positions.clone()),
        cov: g.input(a.cov.clone()),
        color: g.input(a.color.clone()),
        f_v: g.input(a.f_v.clone()),
        f_g: g.input(a.f_g.clone()),
    }
}

/// Read `[P, ·]` primitive nodes back as plain records.
pub fn read_primitives<T: Real>(g: &Graph<T>, p: &PrimitiveNodes, k: usize) -> Vec<NeuralPrimitive> {
    let f = |n: NodeId| g.value(n).data().iter().map(|v| v.f64()).collect::<Vec<f64>>();
    let (x, s, c, o) = (f(p.position), f(p.cov), f(p.color), f(p.opacity));
    (0..o.len())
        .map(|i| NeuralPrimitive {
            anchor_id: i / k,
            position: [x[3 * i], x[3 * i + 1], x[3 * i + 2]],
            cov: std::array::from_fn(|j| s[6 * i + j]),
            color: [c[3 * i], c[3 * i + 1], c[3 * i + 2]],
            opacity: o[i],
        })
        .collect()
}

/// The K primitives of a single anchor.
pub fn derive_primitives<T: Real>(anchor: &Anchor, f_theta: &Mlp<T>, k: usize) -> Result<Vec<NeuralPrimitive>> {
    let mut set = AnchorSet::<T>::empty(anchor.f_v.len(), anchor.f_g.len());
    set.push(anchor)?;
    let mut g = Graph::new();
    let nodes = anchor_nodes_input(&mut g, &set);
    let p = derive_nodes(&mut g, f_theta, &nodes, k)?;
    Ok(read_primitives(&g, &p, k))
}

impl<T: Real> CanonicalSpace<T> {
    pub fn primitive_count(&self) -> usize {
        self.anchors.len() * self.k
    }

    /// Every anchor's primitives, anchor-major.
    pub fn primitives(&self) -> Result<Vec<NeuralPrimitive>> {
        let mut g = Graph::new();
        let nodes = anchor_nodes_input(&mut g, &self.anchors);
        let p = derive_nodes(&mut g, &self.f_theta, &nodes, self.k)?;
        Ok(read_primitives(&g, &p, self.k))
    }
}

//! Coarse-to-fine deformation from the canonical space to a frame: time
//! embedding, per-anchor coarse deformation, per-primitive fine refinement
//! and their composition.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use adcgs_tensor::{Activation, Graph, Mlp, MlpSpec, NodeId, Parameters, Real, Tensor};
use rand::Rng;

use crate::canonical::{anchor_index, NeuralPrimitive, PrimitiveNodes};
use crate::config::{ModelConfig, TimeMode, PE_BANDS, PE_DIM, TIME_DIM, TIME_GRID};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseDeformation {
    pub anchor_id: usize,
    pub d_position: [f64; 3],
    pub d_cov: [f64; 6],
    pub d_color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineDeformation {
    pub d_opacity: f64,
    pub d_color: [f64; 3],
}

/// A renderable Gaussian at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformedPrimitive {
    pub position: [f64; 3],
    pub cov: [f64; 6],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Network evaluation counters (rows pushed through each network).
#[derive(Debug, Default)]
pub struct EvalCounters {
    pub coarse: AtomicU64,
    pub fine: AtomicU64,
}

impl EvalCounters {
    pub fn coarse(&self) -> u64 {
        self.coarse.load(Ordering::Relaxed)
    }

    pub fn fine(&self) -> u64 {
        self.fine.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.coarse.store(0, Ordering::Relaxed);
        self.fine.store(0, Ordering::Relaxed);
    }
}

/// Time grid, time network, coarse network `F_ω` and fine network `F_ϖ`.
#[derive(Debug, Clone)]
pub struct DeformationNets<T> {
    /// `[TIME_GRID]`
    pub z: Tensor<T>,
    pub f_s: Mlp<T>,
    pub f_omega: Mlp<T>,
    pub f_varpi: Mlp<T>,
    pub k: usize,
    pub time_mode: TimeMode,
    pub counters: Arc<EvalCounters>,
}

pub fn f_s_spec(cfg: &ModelConfig) -> Result<MlpSpec> {
    Ok(MlpSpec::new(vec![2, cfg.time_hidden, TIME_DIM], Activation::Tanh, false)?)
}

pub fn f_omega_spec(cfg: &ModelConfig) -> Result<MlpSpec> {
    let h = cfg.deform_hidden;
    Ok(MlpSpec::new(vec![cfg.n_v + TIME_DIM, h, h, 12], Activation::Relu, false)?)
}

pub fn f_varpi_spec(cfg: &ModelConfig) -> Result<MlpSpec> {
    let h = cfg.deform_hidden;
    Ok(MlpSpec::new(vec![PE_DIM + TIME_DIM + cfg.k, h, h, 4], Activation::Relu, false)?)
}

impl<T: Real> DeformationNets<T> {
    /// Random hidden layers with zero output layers, so the deformation
    /// starts as the identity.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut f_omega = Mlp::new("f_omega", f_omega_spec(cfg)?, rng)?;
        let mut f_varpi = Mlp::new("f_varpi", f_varpi_spec(cfg)?, rng)?;
        f_omega.scale_output(0.0);
        f_varpi.scale_output(0.0);
        Ok(Self {
            z: Tensor::randn(&[TIME_GRID], 0.1, rng).param(),
            f_s: Mlp::new("f_s", f_s_spec(cfg)?, rng)?,
            f_omega,
            f_varpi,
            k: cfg.k,
            time_mode: cfg.time_mode,
            counters: Arc::new(EvalCounters::default()),
        })
    }

    pub fn cast<U: Real>(&self) -> DeformationNets<U> {
        DeformationNets {
            z: self.z.cast(),
            f_s: self.f_s.cast(),
            f_omega: self.f_omega.cast(),
            f_varpi: self.f_varpi.cast(),
            k: self.k,
            time_mode: self.time_mode,
            counters: Arc::new(EvalCounters::default()),
        }
    }
}

impl<T: Real> Parameters<T> for DeformationNets<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("time.z", &self.z);
        self.f_s.visit(f);
        self.f_omega.visit(f);
        self.f_varpi.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("time.z", &mut self.z);
        self.f_s.visit_mut(f);
        self.f_omega.visit_mut(f);
        self.f_varpi.visit_mut(f);
    }
}

/// Resolve `t` against the time mode: `(t used, out-of-range flag)`.
pub fn check_time(t: f64, mode: TimeMode) -> Result<(f64, bool)> {
    if !t.is_finite() {
        return Err(CoreError::Config(format!("time {t} is not finite")));
    }
    if (0.0..=1.0).contains(&t) {
        return Ok((t, false));
    }
    match mode {
        TimeMode::Strict => Ok((t.clamp(0.0, 1.0), true)),
        TimeMode::Pedantic => Err(CoreError::Config(format!("time {t} outside [0, 1]"))),
    }
}

/// Grid cell and weight of `t`: value = `z[i] (1 - w) + z[i + 1] w`.
pub fn grid_cell(t: f64, len: usize) -> (usize, f64) {
    let u = t * (len - 1) as f64;
    let i = (u.floor() as usize).min(len - 2);
    (i, u - i as f64)
}

/// Linear interpolation of a 1-D grid node at normalised `t`, as a `[1, 1]` node.
pub fn interp_node<T: Real>(g: &mut Graph<T>, z: NodeId, t: f64) -> NodeId {
    let n = g.value(z).len();
    let (i, w) = grid_cell(t, n);
    let zd = g.value(z).data();
    let v = zd[i] * T::of(1.0 - w) + zd[i + 1] * T::of(w);
    g.custom(
        &[z],
        Tensor::new(vec![1, 1], vec![v]).expect("scalar"),
        Box::new(move |go: &[T]| {
            let mut d = vec![T::zero(); n];
            d[i] = go[0] * T::of(1.0 - w);
            d[i + 1] += go[0] * T::of(w);
            vec![Some(d)]
        }),
    )
}

/// `f_t` as a `[1, TIME_DIM]` node plus the out-of-range flag.
pub fn time_embedding_node<T: Real>(
    g: &mut Graph<T>,
    nets: &DeformationNets<T>,
    t: f64,
) -> Result<(NodeId, bool)> {
    let (t, warned) = check_time(t, nets.time_mode)?;
    let z = g.param("time.z", &nets.z);
    let zi = interp_node(g, z, t);
    let tn = g.input(Tensor::new(vec![1, 1], vec![T::of(t)])?);
    let x = g.concat_cols(&[zi, tn])?;
    Ok((nets.f_s.forward(g, x)?, warned))
}

pub fn time_embedding<T: Real>(nets: &DeformationNets<T>, t: f64) -> Result<(Vec<f64>, bool)> {
    let mut g = Graph::new();
    let (ft, w) = time_embedding_node(&mut g, nets, t)?;
    Ok((g.value(ft).data().iter().map(|v| v.f64()).collect(), w))
}

/// Sinusoidal embedding: for each axis, for each band `l`, `(sin 2^l x, cos 2^l x)`.
pub fn positional_embedding(x: [f64; 3]) -> [f64; PE_DIM] {
    let mut out = [0.0; PE_DIM];
    for a in 0..3 {
        for l in 0..PE_BANDS {
            let f = (1u32 << l) as f64;
            out[a * PE_BANDS * 2 + 2 * l] = (f * x[a]).sin();
            out[a * PE_BANDS * 2 + 2 * l + 1] = (f * x[a]).cos();
        }
    }
    out
}

/// Row-wise positional embedding of an `[N, 3]` node into `[N, PE_DIM]`.
pub fn positional_embedding_node<T: Real>(g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
    let xv: Vec<f64> = g.value(x).data().iter().map(|v| v.f64()).collect();
    if g.value(x).cols() != 3 {
        return Err(CoreError::Contract("positional embedding needs [N, 3] input".into()));
    }
    let n = xv.len() / 3;
    let mut out = Vec::with_capacity(n * PE_DIM);
    for r in 0..n {
        out.extend(positional_embedding([xv[3 * r], xv[3 * r + 1], xv[3 * r + 2]]).map(T::of));
    }
    let value = Tensor::new(vec![n, PE_DIM], out)?;
    Ok(g.custom(
        &[x],
        value,
        Box::new(move |go: &[T]| {
            let mut d = vec![T::zero(); n * 3];
            for r in 0..n {
                for a in 0..3 {
                    let xa = xv[3 * r + a];
                    let mut acc = 0.0;
                    for l in 0..PE_BANDS {
                        let f = (1u32 << l) as f64;
                        let base = r * PE_DIM + a * PE_BANDS * 2 + 2 * l;
                        acc += f * ((f * xa).cos() * go[base].f64() - (f * xa).sin() * go[base + 1].f64());
                    }
                    d[3 * r + a] = T::of(acc);
                }
            }
            vec![Some(d)]
        }),
    ))
}

/// Hidden layers after the first affine map, then the linear output layer.
fn finish_mlp<T: Real>(g: &mut Graph<T>, mlp: &Mlp<T>, mut h: NodeId) -> Result<NodeId> {
    let layers = mlp.spec.layers();
    for l in 0..layers {
        if l > 0 {
            let h_in = h;
            h = mlp.layer(g, l, h)?;
            if l + 1 < layers && mlp.spec.is_skip(l) {
                let a = activate(g, mlp, h);
                h = g.add(h_in, a)?;
                continue;
            }
        }
        if l + 1 < layers {
            h = activate(g, mlp, h);
        }
    }
    Ok(h)
}

fn activate<T: Real>(g: &mut Graph<T>, mlp: &Mlp<T>, h: NodeId) -> NodeId {
    match mlp.spec.activation {
        Activation::Relu => g.relu(h),
        Activation::Tanh => g.tanh(h),
    }
}

/// Coarse nodes `(ΔX [R,3], ΔΣ [R,6], ΔC [R,3])` for `R` rows of `f_v`.
#[derive(Debug, Clone, Copy)]
pub struct CoarseNodes {
    pub d_position: NodeId,
    pub d_cov: NodeId,
    pub d_color: NodeId,
}

/// Anchor-level deformation. Evaluates `F_ω` once per row of `f_v`; the
/// first layer is split so the shared `f_t` part is computed once.
pub fn coarse_nodes<T: Real>(
    g: &mut Graph<T>,
    nets: &DeformationNets<T>,
    f_v: NodeId,
    f_t: NodeId,
) -> Result<CoarseNodes> {
    let mlp = &nets.f_omega;
    let n_v = g.value(f_v).cols();
    let rows = g.value(f_v).rows();
    if mlp.spec.input_width() != n_v + g.value(f_t).cols() || mlp.spec.output_width() != 12 {
        return Err(CoreError::Config(format!(
            "coarse network shape {:?} does not fit f_v width {n_v} and f_t width {}",
            mlp.spec.layer_widths,
            g.value(f_t).cols()
        )));
    }
    let w0 = g.param(mlp.weight_name(0), &mlp.weights[0]);
    let b0 = g.param(&format!("{}.b0", mlp.name()), &mlp.biases[0]);
    let w_v = g.slice_rows(w0, 0, n_v)?;
    let w_t = g.slice_rows(w0, n_v, mlp.spec.input_width())?;
    let per = g.matmul(f_v, w_v)?;
    let shared = g.matmul(f_t, w_t)?;
    let shared = g.add_row(shared, b0)?;
    let shared = g.reshape(shared, vec![mlp.spec.layer_widths[1]])?;
    let h = g.add_row(per, shared)?;
    let out = finish_mlp(g, mlp, h)?;
    nets.counters.coarse.fetch_add(rows as u64, Ordering::Relaxed);
    Ok(CoarseNodes {
        d_position: g.slice_cols(out, 0, 3)?,
        d_cov: g.slice_cols(out, 3, 9)?,
        d_color: g.slice_cols(out, 9, 12)?,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FineNodes {
    pub d_opacity: NodeId,
    pub d_color: NodeId,
}

/// Per-primitive refinement from the anchor's positional embedding `f_p`
/// (`[A, PE_DIM]`), the time embedding and a one-hot slot index. The
/// one-hot product is a row lookup into the slot block of the first layer.
pub fn fine_nodes<T: Real>(
    g: &mut Graph<T>,
    nets: &DeformationNets<T>,
    f_p: NodeId,
    f_t: NodeId,
) -> Result<FineNodes> {
    let mlp = &nets.f_varpi;
    let k = nets.k;
    let a = g.value(f_p).rows();
    let (pw, tw) = (g.value(f_p).cols(), g.value(f_t).cols());
    if mlp.spec.input_width() != pw + tw + k || mlp.spec.output_width() != 4 {
        return Err(CoreError::Config(format!(
            "fine network shape {:?} does not fit inputs {pw}+{tw}+{k}",
            mlp.spec.layer_widths
        )));
    }
    let w0 = g.param(mlp.weight_name(0), &mlp.weights[0]);
    let b0 = g.param(&format!("{}.b0", mlp.name()), &mlp.biases[0]);
    let w_p = g.slice_rows(w0, 0, pw)?;
    let w_t = g.slice_rows(w0, pw, pw + tw)?;
    let w_k = g.slice_rows(w0, pw + tw, pw + tw + k)?;
    let per_anchor = g.matmul(f_p, w_p)?;
    let shared = g.matmul(f_t, w_t)?;
    let shared = g.add_row(shared, b0)?;
    let shared = g.reshape(shared, vec![mlp.spec.layer_widths[1]])?;
    let pa = g.gather_rows(per_anchor, anchor_index(a, k))?;
    let slot = g.gather_rows(w_k, (0..a * k).map(|p| p % k).collect())?;
    let h = g.add(pa, slot)?;
    let h = g.add_row(h, shared)?;
    let out = finish_mlp(g, mlp, h)?;
    nets.counters.fine.fetch_add((a * k) as u64, Ordering::Relaxed);
    Ok(FineNodes {
        d_opacity: g.slice_cols(out, 0, 1)?,
        d_color: g.slice_cols(out, 1, 4)?,
    })
}

/// Composition on `[P, ·]` nodes. Coarse terms are broadcast from
/// anchors to their K primitives; `fine` may be absent (coarse-only).
pub fn compose_nodes<T: Real>(
    g: &mut Graph<T>,
    prims: &PrimitiveNodes,
    coarse: &CoarseNodes,
    fine: Option<&FineNodes>,
    k: usize,
) -> Result<PrimitiveNodes> {
    let a = g.value(coarse.d_position).rows();
    let idx = anchor_index(a, k);
    let dx = g.gather_rows(coarse.d_position, idx.clone())?;
    let ds = g.gather_rows(coarse.d_cov, idx.clone())?;
    let dc = g.gather_rows(coarse.d_color, idx)?;
    let position = g.add(prims.position, dx)?;
    let cov = g.add(prims.cov, ds)?;
    let mut color = g.add(prims.color, dc)?;
    let mut opacity = prims.opacity;
    if let Some(f) = fine {
        color = g.add(color, f.d_color)?;
        opacity = g.add(opacity, f.d_opacity)?;
    }
    Ok(PrimitiveNodes {
        position,
        cov,
        color: g.clamp(color, Some(T::zero()), Some(T::one())),
        opacity: g.clamp(opacity, Some(T::zero()), Some(T::one())),
    })
}

/// Coarse deformation of a single anchor.
pub fn coarse_deform<T: Real>(
    anchor_id: usize,
    f_v: &[f64],
    f_t: &[f64],
    nets: &DeformationNets<T>,
) -> Result<CoarseDeformation> {
    let mut g = Graph::new();
    let fv = g.input(Tensor::new(vec![1, f_v.len()], f_v.iter().map(|&v| T::of(v)).collect())?);
    let ft = g.input(Tensor::new(vec![1, f_t.len()], f_t.iter().map(|&v| T::of(v)).collect())?);
    let c = coarse_nodes(&mut g, nets, fv, ft)?;
    let r = |n: NodeId| g.value(n).data().iter().map(|v| v.f64()).collect::<Vec<f64>>();
    let (x, s, col) = (r(c.d_position), r(c.d_cov), r(c.d_color));
    Ok(CoarseDeformation {
        anchor_id,
        d_position: [x[0], x[1], x[2]],
        d_cov: std::array::from_fn(|i| s[i]),
        d_color: [col[0], col[1], col[2]],
    })
}

/// Fine deformation of every slot of one anchor, slot-ordered.
pub fn fine_deform<T: Real>(
    f_p: &[f64; PE_DIM],
    f_t: &[f64],
    nets: &DeformationNets<T>,
) -> Result<Vec<FineDeformation>> {
    let mut g = Graph::new();
    let fp = g.input(Tensor::new(vec![1, PE_DIM], f_p.iter().map(|&v| T::of(v)).collect())?);
    let ft = g.input(Tensor::new(vec![1, f_t.len()], f_t.iter().map(|&v| T::of(v)).collect())?);
    let f = fine_nodes(&mut g, nets, fp, ft)?;
    let o = g.value(f.d_opacity).data().to_vec();
    let c = g.value(f.d_color).data().to_vec();
    Ok((0..nets.k)
        .map(|s| FineDeformation {
            d_opacity: o[s].f64(),
            d_color: [c[3 * s].f64(), c[3 * s + 1].f64(), c[3 * s + 2].f64()],
        })
        .collect())
}

pub fn compose(
    p: &NeuralPrimitive,
    coarse: &CoarseDeformation,
    fine: &FineDeformation,
) -> Result<DeformedPrimitive> {
    if coarse.anchor_id != p.anchor_id {
        return Err(CoreError::Contract(format!(
            "coarse deformation of anchor {} applied to a primitive of anchor {}",
            coarse.anchor_id, p.anchor_id
        )));
    }
    Ok(DeformedPrimitive {
        position: std::array::from_fn(|i| p.position[i] + coarse.d_position[i]),
        cov: std::array::from_fn(|i| p.cov[i] + coarse.d_cov[i]),
        color: std::array::from_fn(|i| (p.color[i] + coarse.d_color[i] + fine.d_color[i]).clamp(0.0, 1.0)),
        opacity: (p.opacity + fine.d_opacity).clamp(0.0, 1.0),
    })
}

//! Multi-dimension entropy model: adaptive quantization, the hyperprior
//! model for `f_v`, conditional models for `Σ_v` and `C_v`, and the chunked
//! channel-context model for `f_g`.
//!
//! Training builds a differentiable rate on the tape with uniform-noise
//! quantization. Coding runs one `f32` pipeline that the encoder and the
//! decoder share, so both sides derive identical entropy parameters.

use std::collections::BTreeMap;

use adcgs_tensor::{Activation, Graph, Mlp, MlpSpec, NodeId, Parameters, Real, Tensor};
use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

use super::prob::{
    gaussian_bits_node, logistic_bits_node, BinModel, GaussianBins, LatticeCdf, LogisticBins,
    SIGMA_MIN,
};
use super::range::{frame_payload, unframe_payload, RangeDecoder, RangeEncoder};
use crate::canonical::{AnchorNodes, AnchorSet};
use crate::config::{ModelConfig, QuantSteps};
use crate::error::{CoreError, Result};

pub const FQ_HIDDEN: usize = 16;
/// Bounds of the step modulation `1 + tanh(·)`.
pub const STEP_FACTOR_MIN: f64 = 1e-3;
pub const STEP_FACTOR_MAX: f64 = 1.999;

pub const SECTION_HYPER: u8 = 2;
pub const SECTION_F_V: u8 = 3;
pub const SECTION_COV: u8 = 4;
pub const SECTION_COLOR: u8 = 5;
pub const SECTION_F_G: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    FV,
    FG,
    Cov,
    Color,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::FV, Stream::FG, Stream::Cov, Stream::Color];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "f_v" => Ok(Stream::FV),
            "f_g" => Ok(Stream::FG),
            "cov" => Ok(Stream::Cov),
            "color" => Ok(Stream::Color),
            _ => Err(CoreError::Config(format!("unknown quantization stream '{name}'"))),
        }
    }

    pub fn base_step(self, q: &QuantSteps) -> f64 {
        match self {
            Stream::FV => q.f_v,
            Stream::FG => q.f_g,
            Stream::Cov => q.cov,
            Stream::Color => q.color,
        }
    }
}

/// Effective step `Q·(1 + tanh(raw))`, kept inside `(0, 2Q)`.
pub fn effective_step(base: f64, raw: f64) -> f64 {
    base * (1.0 + raw.tanh()).clamp(STEP_FACTOR_MIN, STEP_FACTOR_MAX)
}

/// Same as [`effective_step`] in `f32`, as used by the coding pipeline.
pub fn effective_step_f32(base: f32, raw: f32) -> f32 {
    base * (1.0 + raw.tanh()).clamp(STEP_FACTOR_MIN as f32, STEP_FACTOR_MAX as f32)
}

pub fn quantize_value(value: f32, step: f32) -> (i64, f32) {
    let q = (value / step).round();
    (q as i64, q * step)
}

#[derive(Debug, Clone)]
pub struct EntropyModel<T> {
    pub hyper_enc: Mlp<T>,
    /// Per-channel logistic location and log-scale of the hyper latent.
    pub hyper_loc: Tensor<T>,
    pub hyper_log_scale: Tensor<T>,
    pub e_fv: Mlp<T>,
    pub e_cov: Mlp<T>,
    pub e_color: Mlp<T>,
    pub e_fg: Mlp<T>,
    pub fq_fv: Mlp<T>,
    pub fq_cov: Mlp<T>,
    pub fq_color: Mlp<T>,
    pub fq_fg: Mlp<T>,
    pub steps: QuantSteps,
    pub n_v: usize,
    pub m: usize,
}

fn mlp_spec(widths: Vec<usize>, act: Activation, residual: bool) -> Result<MlpSpec> {
    Ok(MlpSpec::new(widths, act, residual)?)
}

/// Network layouts, in parameter order.
pub fn mem_specs(cfg: &ModelConfig) -> Result<Vec<(&'static str, MlpSpec)>> {
    let h = cfg.entropy_hidden;
    let (nv, hd, fg, l) = (cfg.n_v, cfg.hyper_dim, cfg.f_g_len(), cfg.chunk_len());
    let relu = Activation::Relu;
    Ok(vec![
        ("mem.hyper_enc", mlp_spec(vec![nv, h, hd], relu, false)?),
        ("mem.e_fv", mlp_spec(vec![hd, h, h, 2 * nv], relu, true)?),
        ("mem.e_cov", mlp_spec(vec![nv, h, h, 12], relu, true)?),
        ("mem.e_color", mlp_spec(vec![nv, h, h, 6], relu, true)?),
        ("mem.e_fg", mlp_spec(vec![nv + fg, h, h, 2 * l], relu, true)?),
        ("mem.fq_fv", mlp_spec(vec![hd, FQ_HIDDEN, nv], Activation::Tanh, false)?),
        ("mem.fq_cov", mlp_spec(vec![nv, FQ_HIDDEN, 6], Activation::Tanh, false)?),
        ("mem.fq_color", mlp_spec(vec![nv, FQ_HIDDEN, 3], Activation::Tanh, false)?),
        ("mem.fq_fg", mlp_spec(vec![nv, FQ_HIDDEN, fg], Activation::Tanh, false)?),
    ])
}

/// Zero output weights; `μ` starts at 0 and `σ` at twice the base step.
fn init_param_head<T: Real>(mlp: &mut Mlp<T>, width: usize, base_step: f64) {
    mlp.scale_output(0.0);
    let last = mlp.spec.layers() - 1;
    for v in mlp.bias_mut(last).data_mut()[width..].iter_mut() {
        *v = T::of((2.0 * base_step).ln());
    }
}

impl<T: Real> EntropyModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut nets = BTreeMap::new();
        for (name, spec) in mem_specs(cfg)? {
            nets.insert(name, Mlp::new(name, spec, rng)?);
        }
        fn take<T>(nets: &mut BTreeMap<&str, Mlp<T>>, n: &str) -> Mlp<T> {
            nets.remove(n).expect("declared network")
        }
        let q = cfg.q_steps;
        let mut e_fv = take(&mut nets, "mem.e_fv");
        init_param_head(&mut e_fv, cfg.n_v, q.f_v);
        let mut e_cov = take(&mut nets, "mem.e_cov");
        init_param_head(&mut e_cov, 6, q.cov);
        let mut e_color = take(&mut nets, "mem.e_color");
        init_param_head(&mut e_color, 3, q.color);
        let mut e_fg = take(&mut nets, "mem.e_fg");
        init_param_head(&mut e_fg, cfg.chunk_len(), q.f_g);
        let hyper_enc = take(&mut nets, "mem.hyper_enc");
        let mut fq = |n: &str| {
            let mut m = take(&mut nets, n);
            m.scale_output(0.0);
            m
        };
        Ok(Self {
            hyper_enc,
            hyper_loc: Tensor::zeros(&[cfg.hyper_dim]).param(),
            hyper_log_scale: Tensor::zeros(&[cfg.hyper_dim]).param(),
            e_fv,
            e_cov,
            e_color,
            e_fg,
            fq_fv: fq("mem.fq_fv"),
            fq_cov: fq("mem.fq_cov"),
            fq_color: fq("mem.fq_color"),
            fq_fg: fq("mem.fq_fg"),
            steps: q,
            n_v: cfg.n_v,
            m: cfg.m,
        })
    }

    pub fn hyper_dim(&self) -> usize {
        self.hyper_loc.len()
    }

    pub fn f_g_len(&self) -> usize {
        self.e_fg.spec.input_width() - self.n_v
    }

    pub fn chunk_len(&self) -> usize {
        self.f_g_len() / self.m
    }

    pub fn cast<U: Real>(&self) -> EntropyModel<U> {
        EntropyModel {
            hyper_enc: self.hyper_enc.cast(),
            hyper_loc: self.hyper_loc.cast(),
            hyper_log_scale: self.hyper_log_scale.cast(),
            e_fv: self.e_fv.cast(),
            e_cov: self.e_cov.cast(),
            e_color: self.e_color.cast(),
            e_fg: self.e_fg.cast(),
            fq_fv: self.fq_fv.cast(),
            fq_cov: self.fq_cov.cast(),
            fq_color: self.fq_color.cast(),
            fq_fg: self.fq_fg.cast(),
            steps: self.steps,
            n_v: self.n_v,
            m: self.m,
        }
    }

    /// Networks the decoder needs (everything but the hyper encoder).
    pub fn visit_decoder(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("mem.hyper_loc", &self.hyper_loc);
        f("mem.hyper_log_scale", &self.hyper_log_scale);
        for m in [
            &self.e_fv,
            &self.e_cov,
            &self.e_color,
            &self.e_fg,
            &self.fq_fv,
            &self.fq_cov,
            &self.fq_color,
            &self.fq_fg,
        ] {
            m.visit(f);
        }
    }
}

impl<T: Real> EntropyModel<T> {
    pub fn visit_decoder_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("mem.hyper_loc", &mut self.hyper_loc);
        f("mem.hyper_log_scale", &mut self.hyper_log_scale);
        for m in [
            &mut self.e_fv,
            &mut self.e_cov,
            &mut self.e_color,
            &mut self.e_fg,
            &mut self.fq_fv,
            &mut self.fq_cov,
            &mut self.fq_color,
            &mut self.fq_fg,
        ] {
            m.visit_mut(f);
        }
    }
}

impl<T: Real> Parameters<T> for EntropyModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.hyper_enc.visit(f);
        self.visit_decoder(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.hyper_enc.visit_mut(f);
        self.visit_decoder_mut(f);
    }
}

/// Noisy anchor attributes and the rate terms of one training step.
#[derive(Debug, Clone)]
pub struct RateNodes {
    pub anchors: AnchorNodes,
    /// Scalar total bits.
    pub bits: NodeId,
    /// Per-section bits, keyed by section id.
    pub section_bits: BTreeMap<u8, NodeId>,
    pub symbols: usize,
}

fn uniform_noise<T: Real>(shape: &[usize], rng: &mut Option<&mut dyn RngCore>) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    if let Some(rng) = rng.as_mut() {
        for v in t.data_mut() {
            *v = T::of(rng.gen_range(-0.5..0.5));
        }
    }
    t
}

/// `Q·clamp(1 + tanh(F_q(ctx)), ·)` with the context detached.
fn step_node<T: Real>(g: &mut Graph<T>, fq: &Mlp<T>, ctx: NodeId, base: f64) -> Result<NodeId> {
    let ctx = g.detach(ctx);
    let raw = fq.forward(g, ctx)?;
    let t = g.tanh(raw);
    let t = g.offset(t, T::one());
    let t = g.clamp(t, Some(T::of(STEP_FACTOR_MIN)), Some(T::of(STEP_FACTOR_MAX)));
    Ok(g.scale(t, T::of(base)))
}

/// `(μ, σ)` from an entropy head whose output is `[μ | log σ]`.
fn params_node<T: Real>(g: &mut Graph<T>, e: &Mlp<T>, ctx: NodeId, width: usize) -> Result<(NodeId, NodeId)> {
    let out = e.forward(g, ctx)?;
    let mu = g.slice_cols(out, 0, width)?;
    let ls = g.slice_cols(out, width, 2 * width)?;
    let s = g.exp(ls);
    Ok((mu, g.clamp(s, Some(T::of(SIGMA_MIN)), None)))
}

/// `x + U(−½, ½)·step`; the identity path gives the straight-through gradient.
fn noisy<T: Real>(g: &mut Graph<T>, x: NodeId, step: NodeId, rng: &mut Option<&mut dyn RngCore>) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let u = g.input(uniform_noise(&shape, rng));
    let d = g.mul(u, step)?;
    Ok(g.add(x, d)?)
}

/// Training-mode quantization and rate. `rng = None` disables the noise,
/// which leaves a deterministic, differentiable rate for gradient checks.
pub fn rate_nodes<T: Real>(
    g: &mut Graph<T>,
    mem: &EntropyModel<T>,
    a: &AnchorNodes,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<RateNodes> {
    let rows = g.value(a.f_v).rows();
    let (nv, l, fg) = (mem.n_v, mem.chunk_len(), mem.f_g_len());
    if g.value(a.f_v).cols() != nv || g.value(a.f_g).cols() != fg {
        return Err(CoreError::Config("anchor features do not match the entropy model".into()));
    }
    let q = mem.steps;
    let mut section_bits = BTreeMap::new();

    let eta = mem.hyper_enc.forward(g, a.f_v)?;
    let hd = mem.hyper_dim();
    let u = g.input(uniform_noise(&[rows, hd], &mut rng));
    let eta = g.add(eta, u)?;
    let loc = g.param("mem.hyper_loc", &mem.hyper_loc);
    let ls = g.param("mem.hyper_log_scale", &mem.hyper_log_scale);
    section_bits.insert(SECTION_HYPER, logistic_bits_node(g, eta, loc, ls)?);

    let (mu, sigma) = params_node(g, &mem.e_fv, eta, nv)?;
    let step = step_node(g, &mem.fq_fv, eta, q.f_v)?;
    let f_v = noisy(g, a.f_v, step, &mut rng)?;
    section_bits.insert(SECTION_F_V, gaussian_bits_node(g, f_v, mu, sigma, step)?);

    let (mu, sigma) = params_node(g, &mem.e_cov, f_v, 6)?;
    let step = step_node(g, &mem.fq_cov, f_v, q.cov)?;
    let cov = noisy(g, a.cov, step, &mut rng)?;
    section_bits.insert(SECTION_COV, gaussian_bits_node(g, cov, mu, sigma, step)?);

    let (mu, sigma) = params_node(g, &mem.e_color, f_v, 3)?;
    let step = step_node(g, &mem.fq_color, f_v, q.color)?;
    let color = noisy(g, a.color, step, &mut rng)?;
    section_bits.insert(SECTION_COLOR, gaussian_bits_node(g, color, mu, sigma, step)?);

    let step = step_node(g, &mem.fq_fg, f_v, q.f_g)?;
    let f_g = noisy(g, a.f_g, step, &mut rng)?;
    for ch in 0..mem.m {
        let mut parts = vec![f_v];
        if ch > 0 {
            parts.push(g.slice_cols(f_g, 0, ch * l)?);
        }
        parts.push(g.input(Tensor::zeros(&[rows, fg - ch * l])));
        let ctx = g.concat_cols(&parts)?;
        let (mu, sigma) = params_node(g, &mem.e_fg, ctx, l)?;
        let x = g.slice_cols(f_g, ch * l, (ch + 1) * l)?;
        let s = g.slice_cols(step, ch * l, (ch + 1) * l)?;
        section_bits.insert(SECTION_F_G + ch as u8, gaussian_bits_node(g, x, mu, sigma, s)?);
    }

    let mut total = None;
    for &b in section_bits.values() {
        let s = g.sum(b);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    Ok(RateNodes {
        anchors: AnchorNodes {
            position: a.position,
            cov,
            color,
            f_v,
            f_g,
        },
        bits: total.expect("at least one section"),
        section_bits,
        symbols: rows * (hd + nv + 6 + 3 + fg),
    })
}

/// Where the coding pipeline gets its symbols from.
pub enum Side<'a> {
    /// Quantize these anchors and emit payloads.
    Encode(&'a AnchorSet<f32>),
    /// Read symbols from framed section payloads.
    Decode(&'a BTreeMap<u8, Vec<u8>>),
}

/// Result of one pass of the coding pipeline.
#[derive(Debug, Clone)]
pub struct CodedAnchors {
    /// Dequantized attributes (positions left empty, `[A, 3]` zeros).
    pub anchors: AnchorSet<f32>,
    pub symbols: BTreeMap<u8, Vec<i64>>,
    /// Ideal code length of every section under the model, in bits.
    pub estimated_bits: BTreeMap<u8, f64>,
    /// Framed payloads (encode side only).
    pub payloads: BTreeMap<u8, Vec<u8>>,
    /// Hash of every context and entropy parameter, in coding order.
    pub transcript: [u8; 32],
}

struct Pipeline<'a> {
    side: Side<'a>,
    symbols: BTreeMap<u8, Vec<i64>>,
    estimated_bits: BTreeMap<u8, f64>,
    payloads: BTreeMap<u8, Vec<u8>>,
    hasher: Sha256,
}

impl Pipeline<'_> {
    fn code<M: BinModel>(&mut self, id: u8, models: &[M], propose: impl FnOnce() -> Vec<i64>) -> Result<Vec<i64>> {
        let q = match &self.side {
            Side::Encode(_) => {
                let q = propose();
                let mut enc = RangeEncoder::new();
                for (m, &s) in models.iter().zip(&q) {
                    LatticeCdf::new(m).encode(&mut enc, s);
                }
                self.payloads.insert(id, frame_payload(&enc.finish(), q.len() as u32));
                q
            }
            Side::Decode(sections) => {
                let bytes = sections
                    .get(&id)
                    .ok_or_else(|| CoreError::Decode(format!("section {id} is missing")))?;
                let (body, count) = unframe_payload(bytes)?;
                if count as usize != models.len() {
                    return Err(CoreError::Decode(format!(
                        "section {id} holds {count} symbols, expected {}",
                        models.len()
                    )));
                }
                if models.is_empty() {
                    Vec::new()
                } else {
                    let mut dec = RangeDecoder::new(body)?;
                    models
                        .iter()
                        .map(|m| LatticeCdf::new(m).decode(&mut dec))
                        .collect::<Result<Vec<i64>>>()?
                }
            }
        };
        let bits: f64 = models.iter().zip(&q).map(|(m, &s)| -m.mass(s).log2()).sum();
        self.estimated_bits.insert(id, bits);
        self.symbols.insert(id, q.clone());
        Ok(q)
    }

    fn absorb(&mut self, values: &[f32]) {
        for v in values {
            self.hasher.update(v.to_le_bytes());
        }
    }
}

fn eval(mlp: &Mlp<f32>, rows: usize, x: Vec<f32>) -> Result<Vec<f32>> {
    let cols = mlp.spec.input_width();
    Ok(mlp.eval(&Tensor::new(vec![rows, cols], x)?)?.into_data())
}

/// Split `[rows, 2w]` head output into `μ` and floored `σ`.
fn split_params(out: &[f32], rows: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
    let mut mu = Vec::with_capacity(rows * w);
    let mut sigma = Vec::with_capacity(rows * w);
    for r in 0..rows {
        let row = &out[r * 2 * w..(r + 1) * 2 * w];
        mu.extend_from_slice(&row[..w]);
        sigma.extend(row[w..].iter().map(|&s| s.exp().max(SIGMA_MIN as f32)));
    }
    (mu, sigma)
}

fn steps(mlp: &Mlp<f32>, rows: usize, ctx: &[f32], base: f64) -> Result<Vec<f32>> {
    let raw = eval(mlp, rows, ctx.to_vec())?;
    Ok(raw.iter().map(|&r| effective_step_f32(base as f32, r)).collect())
}

fn gaussian_models(mu: &[f32], sigma: &[f32], step: &[f32]) -> Vec<GaussianBins> {
    (0..mu.len())
        .map(|i| GaussianBins {
            mu: mu[i] as f64,
            sigma: sigma[i] as f64,
            step: step[i] as f64,
        })
        .collect()
}

fn columns(data: &[f32], rows: usize, cols: usize, start: usize, end: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * (end - start));
    for r in 0..rows {
        out.extend_from_slice(&data[r * cols + start..r * cols + end]);
    }
    out
}

fn quantize_all(values: &[f32], steps: &[f32]) -> Vec<i64> {
    values.iter().zip(steps).map(|(&v, &s)| quantize_value(v, s).0).collect()
}

fn dequantize(q: &[i64], steps: &[f32]) -> Vec<f32> {
    q.iter().zip(steps).map(|(&q, &s)| q as f32 * s).collect()
}

/// Test-mode quantization and coding of `rows` anchors. Encoder and decoder
/// run this same sequence, differing only in where symbols come from.
pub fn run_pipeline(mem: &EntropyModel<f32>, rows: usize, side: Side<'_>) -> Result<CodedAnchors> {
    let (nv, hd, fg, l) = (mem.n_v, mem.hyper_dim(), mem.f_g_len(), mem.chunk_len());
    if let Side::Encode(a) = &side {
        if a.len() != rows || a.f_v.cols() != nv || a.f_g.cols() != fg {
            return Err(CoreError::Contract("anchor table does not match the entropy model".into()));
        }
    }
    let source = match &side {
        Side::Encode(a) => Some(*a),
        Side::Decode(_) => None,
    };
    let mut p = Pipeline {
        side,
        symbols: BTreeMap::new(),
        estimated_bits: BTreeMap::new(),
        payloads: BTreeMap::new(),
        hasher: Sha256::new(),
    };
    let q = mem.steps;

    let hyper_models: Vec<LogisticBins> = (0..rows * hd)
        .map(|i| LogisticBins {
            loc: mem.hyper_loc.data()[i % hd] as f64,
            scale: (mem.hyper_log_scale.data()[i % hd] as f64).exp().max(SIGMA_MIN),
        })
        .collect();
    let eta_q = p.code(SECTION_HYPER, &hyper_models, || {
        let a = source.expect("encode side");
        let eta = eval(&mem.hyper_enc, rows, a.f_v.data().to_vec()).unwrap_or_default();
        eta.iter().map(|&e| e.round() as i64).collect()
    })?;
    if eta_q.len() != rows * hd {
        return Err(CoreError::Numeric("hyper encoder produced no latent".into()));
    }
    let eta: Vec<f32> = eta_q.iter().map(|&e| e as f32).collect();
    p.absorb(&eta);

    let (mu, sigma) = split_params(&eval(&mem.e_fv, rows, eta.clone())?, rows, nv);
    let step = steps(&mem.fq_fv, rows, &eta, q.f_v)?;
    p.absorb(&mu);
    p.absorb(&sigma);
    p.absorb(&step);
    let qv = p.code(SECTION_F_V, &gaussian_models(&mu, &sigma, &step), || {
        quantize_all(source.expect("encode side").f_v.data(), &step)
    })?;
    let f_v = dequantize(&qv, &step);

    let (mu, sigma) = split_params(&eval(&mem.e_cov, rows, f_v.clone())?, rows, 6);
    let step = steps(&mem.fq_cov, rows, &f_v, q.cov)?;
    p.absorb(&step);
    let qc = p.code(SECTION_COV, &gaussian_models(&mu, &sigma, &step), || {
        quantize_all(source.expect("encode side").cov.data(), &step)
    })?;
    let cov = dequantize(&qc, &step);

    let (mu, sigma) = split_params(&eval(&mem.e_color, rows, f_v.clone())?, rows, 3);
    let step = steps(&mem.fq_color, rows, &f_v, q.color)?;
    p.absorb(&step);
    let qc = p.code(SECTION_COLOR, &gaussian_models(&mu, &sigma, &step), || {
        quantize_all(source.expect("encode side").color.data(), &step)
    })?;
    let color = dequantize(&qc, &step);

    let step = steps(&mem.fq_fg, rows, &f_v, q.f_g)?;
    let mut f_g = vec![0f32; rows * fg];
    for ch in 0..mem.m {
        let mut ctx = Vec::with_capacity(rows * (nv + fg));
        for r in 0..rows {
            ctx.extend_from_slice(&f_v[r * nv..(r + 1) * nv]);
            ctx.extend_from_slice(&f_g[r * fg..r * fg + ch * l]);
            ctx.extend(std::iter::repeat(0f32).take(fg - ch * l));
        }
        p.absorb(&ctx);
        let (mu, sigma) = split_params(&eval(&mem.e_fg, rows, ctx)?, rows, l);
        let s = columns(&step, rows, fg, ch * l, (ch + 1) * l);
        p.absorb(&mu);
        p.absorb(&sigma);
        let qg = p.code(SECTION_F_G + ch as u8, &gaussian_models(&mu, &sigma, &s), || {
            let a = source.expect("encode side");
            quantize_all(&columns(a.f_g.data(), rows, fg, ch * l, (ch + 1) * l), &s)
        })?;
        let vals = dequantize(&qg, &s);
        for r in 0..rows {
            f_g[r * fg + ch * l..r * fg + (ch + 1) * l].copy_from_slice(&vals[r * l..(r + 1) * l]);
        }
    }

    let mut anchors = AnchorSet::<f32>::empty(nv, fg);
    anchors.positions = Tensor::zeros(&[rows, 3]);
    anchors.cov = Tensor::new(vec![rows, 6], cov)?.param();
    anchors.color = Tensor::new(vec![rows, 3], color)?.param();
    anchors.f_v = Tensor::new(vec![rows, nv], f_v)?.param();
    anchors.f_g = Tensor::new(vec![rows, fg], f_g)?.param();
    Ok(CodedAnchors {
        anchors,
        symbols: p.symbols,
        estimated_bits: p.estimated_bits,
        payloads: p.payloads,
        transcript: p.hasher.finalize().into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_modulation_gives_base_step() {
        assert_eq!(effective_step(0.1, 0.0), 0.1);
        assert_eq!(effective_step_f32(0.01, 0.0), 0.01);
    }

    #[test]
    fn step_stays_inside_open_interval() {
        for raw in [-1e9, -30.0, -1.0, 0.0, 1.0, 30.0, 1e9] {
            let s = effective_step(0.1, raw);
            assert!(s > 0.0 && s < 0.2, "raw {raw} gave {s}");
        }
    }

    #[test]
    fn test_mode_rounds_to_lattice() {
        let (q, v) = quantize_value(0.26, 0.1);
        assert_eq!(q, 3);
        assert!((v - 0.3).abs() < 1e-6);
    }

    #[test]
    fn unknown_stream_is_a_config_error() {
        assert!(matches!(Stream::parse("opacity"), Err(CoreError::Config(_))));
        assert_eq!(Stream::parse("f_g").unwrap(), Stream::FG);
    }

    #[test]
    fn fresh_model_predicts_base_steps() {
        let cfg = ModelConfig::default();
        let mem = EntropyModel::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = steps(&mem.fq_cov, 2, &vec![0.3; 2 * cfg.n_v], cfg.q_steps.cov).unwrap();
        assert!(s.iter().all(|&v| v == cfg.q_steps.cov as f32));
    }
}

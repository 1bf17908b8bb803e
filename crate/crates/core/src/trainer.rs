//! Rate-distortion training: loss assembly, the milestone schedule and a
//! deterministic single-view-per-step loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use adcgs_tensor::{adam_update, collect_grads, AdamConfig, AdamState, Graph, NodeId, Parameters, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::metrics;
use crate::model::{Model, Stages};
use crate::refinement::{refine, RefinementConfig, RefinementEvent, SignificanceAccumulator};
use crate::renderer::{Camera, RasterMode};

/// One supervised view: a camera at normalised time `t` with its image.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: Camera,
    pub t: f64,
    /// Interleaved `[H, W, 3]` in `[0, 1]`.
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Anchor latent features `f_v`, `f_g`.
    pub features: f64,
    /// Anchor covariance and color.
    pub attributes: f64,
    /// Primitive prediction network.
    pub prediction: f64,
    /// Time grid and deformation networks.
    pub deformation: f64,
    /// Entropy and quantization networks.
    pub entropy: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            features: 5e-3,
            attributes: 5e-3,
            prediction: 2e-3,
            deformation: 2e-3,
            entropy: 2e-3,
        }
    }
}

impl LearningRates {
    fn for_param(&self, name: &str) -> f64 {
        match name.split('.').next().unwrap_or("") {
            "anchor" if name.ends_with("f_v") || name.ends_with("f_g") => self.features,
            "anchor" => self.attributes,
            "f_theta" => self.prediction,
            "mem" => self.entropy,
            _ => self.deformation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_ssim: f64,
    pub lambda_e: f64,
    pub total_iterations: usize,
    /// Milestones as fractions of `total_iterations`.
    pub refine_start: f64,
    pub refine_end: f64,
    pub deform_start: f64,
    pub rd_start: f64,
    /// Iterations per refinement window.
    pub refine_interval: usize,
    pub refinement: RefinementConfig,
    /// Deformation stages enabled after the deformation milestone.
    pub stages: Stages,
    pub seed: u64,
    pub voxel_size: f64,
    pub learning_rates: LearningRates,
    /// Learning rates decay exponentially to this fraction of their base
    /// value by the last iteration.
    pub lr_final_ratio: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub model: ModelConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_e: 1e-3,
            total_iterations: 3000,
            refine_start: 0.04,
            refine_end: 0.83,
            deform_start: 0.27,
            rd_start: 0.33,
            refine_interval: 400,
            refinement: RefinementConfig::default(),
            stages: Stages::FULL,
            seed: 7,
            voxel_size: 0.08,
            learning_rates: LearningRates::default(),
            lr_final_ratio: 0.1,
            grad_clip: 10.0,
            model: ModelConfig::default(),
        }
    }
}

/// Iteration counts at which each phase begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Milestones {
    pub refine_start: usize,
    pub refine_end: usize,
    pub deform_start: usize,
    pub rd_start: usize,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return bad("lambda_ssim must lie in [0, 1]");
        }
        if !(self.lambda_e > 0.0 && self.lambda_e.is_finite()) {
            return bad("lambda_e must be positive");
        }
        let f = [self.refine_start, self.deform_start, self.rd_start, self.refine_end];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || !f.windows(2).all(|w| w[0] < w[1]) {
            return bad("milestones must satisfy 0 <= refine_start < deform_start < rd_start < refine_end <= 1");
        }
        if self.refine_interval == 0 {
            return bad("refine_interval must be positive");
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        let r = self.learning_rates;
        if [r.features, r.attributes, r.prediction, r.deformation, r.entropy]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("learning rates must be non-negative");
        }
        if !(self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0) {
            return bad("lr_final_ratio must lie in (0, 1]");
        }
        Ok(())
    }

    /// Learning-rate multiplier at a zero-based iteration.
    pub fn lr_scale(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.total_iterations.max(1) as f64;
        self.lr_final_ratio.powf(frac)
    }

    pub fn milestones(&self) -> Milestones {
        let at = |f: f64| (f * self.total_iterations as f64).round() as usize;
        Milestones {
            refine_start: at(self.refine_start),
            refine_end: at(self.refine_end),
            deform_start: at(self.deform_start),
            rd_start: at(self.rd_start),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| CoreError::Config(format!("training config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// Distortion and rate terms of one evaluated loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub ssim: f64,
    pub rate: f64,
    pub total: f64,
}

/// `(1 − λ_ssim)·L1 + λ_ssim·(1 − SSIM) + λ_e·R` on plain images.
pub fn loss(rendered: &[f64], target: &[f64], width: usize, height: usize, rate: f64, lambda_ssim: f64, lambda_e: f64) -> Result<LossTerms> {
    let s = metrics::ssim(rendered, target, width, height)?;
    let l1 = rendered.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / rendered.len() as f64;
    Ok(LossTerms {
        l1,
        ssim: s,
        rate,
        total: (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s) + lambda_e * rate,
    })
}

/// Mean SSIM of an `[H, W, 3]` image node against a constant target.
pub fn ssim_node<T: Real>(g: &mut Graph<T>, image: NodeId, target: &[f64]) -> Result<NodeId> {
    let shape = g.value(image).shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(CoreError::Contract(format!("ssim needs an [H, W, 3] image, got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let x: Vec<f64> = g.value(image).data().iter().map(|v| v.f64()).collect();
    let (s, grad) = metrics::ssim_with_grad(&x, target, w, h)?;
    let value = Tensor::new(vec![1], vec![T::of(s)])?;
    Ok(g.custom(
        &[image],
        value,
        Box::new(move |gout: &[T]| {
            let d = gout[0].f64();
            vec![Some(grad.iter().map(|v| T::of(v * d)).collect())]
        }),
    ))
}

/// One row of the per-iteration CSV log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub l1: f64,
    pub ssim: f64,
    pub rate_bits: f64,
    pub total_loss: f64,
    pub anchors: usize,
    pub psnr_train: f64,
}

pub fn write_csv<W: Write, R: Serialize>(w: W, rows: &[R]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CoreError::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

/// Result of a finished run.
pub struct TrainOutput {
    pub model: Model<f32>,
    pub log: Vec<LogRow>,
    pub events: Vec<RefinementEvent>,
}

const ANCHOR_ROWS: [&str; 4] = ["anchor.cov", "anchor.color", "anchor.f_v", "anchor.f_g"];

/// Stateful training loop over a fixed view set.
pub struct Trainer<'a> {
    pub model: Model<f32>,
    pub config: TrainingConfig,
    views: &'a [TrainingView],
    milestones: Milestones,
    optim: BTreeMap<String, AdamState<f32>>,
    accumulator: SignificanceAccumulator,
    order: Vec<usize>,
    cursor: usize,
    view_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    iteration: usize,
    log: Vec<LogRow>,
    events: Vec<RefinementEvent>,
    diagnostics: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    /// Canonical space from `points`, fresh optimizer state.
    pub fn new(views: &'a [TrainingView], points: &[[f64; 3]], config: &TrainingConfig) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(points, config.voxel_size, &config.model, &mut init_rng)?;
        Self::from_model(views, model, config)
    }

    pub fn from_model(views: &'a [TrainingView], model: Model<f32>, config: &TrainingConfig) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(CoreError::Data("no training views".into()));
        }
        for v in views {
            v.camera.validate()?;
            if v.image.len() != v.camera.width * v.camera.height * 3 {
                return Err(CoreError::Data(format!(
                    "view image holds {} values, camera is {}x{}",
                    v.image.len(),
                    v.camera.width,
                    v.camera.height
                )));
            }
        }
        let mut optim = BTreeMap::new();
        let lr = config.learning_rates;
        model.visit(&mut |name, t| {
            if name != "anchor.position" {
                optim.insert(name.to_string(), AdamState::new(t.len(), AdamConfig::with_lr(lr.for_param(name))));
            }
        });
        let accumulator = SignificanceAccumulator::new(model.anchor_count(), model.canonical.k);
        Ok(Self {
            model,
            config: config.clone(),
            views,
            milestones: config.milestones(),
            optim,
            accumulator,
            order: Vec::new(),
            cursor: 0,
            view_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7669_6577),
            noise_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973),
            iteration: 0,
            log: Vec::new(),
            events: Vec::new(),
            diagnostics: None,
        })
    }

    /// Where to write a model snapshot if the loss stops being finite.
    pub fn with_diagnostics(mut self, path: PathBuf) -> Self {
        self.diagnostics = Some(path);
        self
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn milestones(&self) -> Milestones {
        self.milestones
    }

    /// Stages active at the current iteration.
    pub fn stages(&self) -> Stages {
        if self.iteration >= self.milestones.deform_start {
            self.config.stages
        } else {
            Stages::CANONICAL
        }
    }

    pub fn rate_active(&self) -> bool {
        self.iteration >= self.milestones.rd_start
    }

    fn next_view(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.view_rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// One optimisation step on one view.
    pub fn step(&mut self) -> Result<LogRow> {
        let stages = self.stages();
        let rd = self.rate_active();
        let ms = self.milestones;
        let in_window = self.iteration >= ms.refine_start && self.iteration < ms.refine_end;
        let view = &self.views[self.next_view()];
        let (w, h) = (view.camera.width, view.camera.height);

        let mut g = Graph::<f32>::new();
        let noise = rd.then(|| Some(&mut self.noise_rng as &mut dyn rand::RngCore));
        let fr = self.model.frame_nodes(&mut g, view.t, &view.camera, stages, RasterMode::Tiled, noise)?;
        let target = g.input(Tensor::new(vec![h, w, 3], view.image.iter().map(|&v| v as f32).collect())?);
        let diff = g.sub(fr.image, target)?;
        let ad = g.abs(diff);
        let l1 = g.mean(ad);
        let s = ssim_node(&mut g, fr.image, &view.image)?;
        let ls = self.config.lambda_ssim;
        let a = g.scale(l1, f32::of(1.0 - ls));
        let b = g.scale(s, f32::of(-ls));
        let b = g.offset(b, f32::of(ls));
        let mut loss = g.add(a, b)?;
        let mut rate_bits = 0.0;
        if let Some(r) = &fr.rate {
            rate_bits = g.scalar(r.bits).f64();
            let per = g.scale(r.bits, f32::of(self.config.lambda_e / r.symbols.max(1) as f64));
            loss = g.add(loss, per)?;
        }
        let total = g.scalar(loss).f64();
        let image: Vec<f64> = g.value(fr.image).data().iter().map(|v| v.f64()).collect();
        let row = LogRow {
            iteration: self.iteration + 1,
            l1: g.scalar(l1).f64(),
            ssim: g.scalar(s).f64(),
            rate_bits,
            total_loss: total,
            anchors: self.model.anchor_count(),
            psnr_train: metrics::psnr(&image, &view.image)?,
        };
        if !total.is_finite() {
            let mut msg = format!("non-finite loss {total} at iteration {}", self.iteration + 1);
            if let Some(p) = &self.diagnostics {
                self.model.save(p)?;
                msg.push_str(&format!("; snapshot written to {}", p.display()));
            }
            return Err(CoreError::Numeric(msg));
        }

        let grads = g.backward(loss)?;
        collect_grads(&mut self.model, &g, &grads);
        if in_window {
            let opacity: Vec<f64> = g.value(fr.primitives.opacity).data().iter().map(|v| v.f64()).collect();
            let grad2d = fr.stats.grad2d.borrow();
            self.accumulator.record(&fr.stats.psi, &grad2d, &opacity)?;
        }
        drop(g);
        self.apply_gradients()?;
        self.iteration += 1;

        let done = self.iteration;
        if done > ms.refine_start && done <= ms.refine_end && (done - ms.refine_start) % self.config.refine_interval == 0 {
            self.refine()?;
        }
        self.log.push(row);
        Ok(row)
    }

    fn apply_gradients(&mut self) -> Result<()> {
        let mut sq = 0.0f64;
        self.model.visit(&mut |_, t| {
            if let Some(gr) = &t.grad {
                sq += gr.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
            }
        });
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite gradient norm at iteration {}",
                self.iteration + 1
            )));
        }
        let factor = if norm > self.config.grad_clip { self.config.grad_clip / norm } else { 1.0 };
        let scale = self.config.lr_scale(self.iteration);
        let rates = self.config.learning_rates;
        let optim = &mut self.optim;
        let mut err = None;
        self.model.visit_mut(&mut |name, t| {
            if t.grad.is_none() || err.is_some() {
                return;
            }
            if factor < 1.0 {
                let f = f32::of(factor);
                t.grad.as_mut().into_iter().flatten().for_each(|v| *v *= f);
            }
            if let Some(state) = optim.get_mut(name) {
                state.config.learning_rate = rates.for_param(name) * scale;
                if let Err(e) = adam_update(t, state) {
                    err = Some(e);
                }
            } else {
                t.grad = None;
            }
        });
        match err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }

    fn refine(&mut self) -> Result<()> {
        let outcome = refine(&mut self.model.canonical, &self.accumulator, &self.config.refinement)?;
        let anchors = &self.model.canonical.anchors;
        let widths: BTreeMap<&str, usize> = [
            ("anchor.cov", anchors.cov.cols()),
            ("anchor.color", anchors.color.cols()),
            ("anchor.f_v", anchors.f_v.cols()),
            ("anchor.f_g", anchors.f_g.cols()),
        ]
        .into();
        let rows_after_grow = outcome.keep.len();
        for name in ANCHOR_ROWS {
            let cols = widths[name];
            let state = self.optim.get_mut(name).expect("anchor optimizer state");
            state.grow(rows_after_grow * cols);
            state.retain_rows(&outcome.keep, cols);
        }
        let n = self.model.anchor_count();
        self.accumulator = self.accumulator.resized(n);
        self.events.push(RefinementEvent {
            iteration: self.iteration,
            grown: outcome.grown,
            pruned: outcome.pruned(),
            anchors: n,
        });
        Ok(())
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn events(&self) -> &[RefinementEvent] {
        &self.events
    }

    /// Run the remaining iterations and finish.
    pub fn run(mut self, on_step: &mut dyn FnMut(&LogRow)) -> Result<TrainOutput> {
        while self.iteration < self.config.total_iterations {
            let row = self.step()?;
            on_step(&row);
        }
        Ok(self.finish())
    }

    /// Stop here: the model keeps the stages it was last trained with.
    pub fn finish(mut self) -> TrainOutput {
        self.model.stages = if self.iteration > self.milestones.deform_start {
            self.config.stages
        } else {
            Stages::CANONICAL
        };
        TrainOutput {
            model: self.model,
            log: self.log,
            events: self.events,
        }
    }
}

/// Train from scratch on `views` with anchors initialised from `points`.
pub fn train(views: &[TrainingView], points: &[[f64; 3]], config: &TrainingConfig) -> Result<TrainOutput> {
    Trainer::new(views, points, config)?.run(&mut |_| {})
}

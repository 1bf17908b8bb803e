//! Rendering of deformed primitives through a camera, its backward pass,
//! and the tape op that plugs both into a training graph.

use std::cell::RefCell;
use std::rc::Rc;

use adcgs_tensor::{Graph, NodeId, Real, Tensor};

use super::camera::Camera;
use super::project::project;
use super::raster::{rasterize, rasterize_bruteforce, RasterMode, RenderOutput, Splat2D};
use crate::deformation::DeformedPrimitive;
use crate::error::{CoreError, Result};

/// One rendered view with everything its backward pass needs.
#[derive(Debug, Clone)]
pub struct Frame {
    pub splats: Vec<Splat2D>,
    jacobians: Vec<[[f64; 9]; 5]>,
    /// Primitive index of each splat.
    pub primitive_of: Vec<usize>,
    pub output: RenderOutput,
    pub primitive_count: usize,
}

/// Gradients per primitive; culled primitives get exact zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrimitiveGrads {
    pub position: Vec<[f64; 3]>,
    pub cov: Vec<[f64; 6]>,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    /// Norm of the screen-space mean gradient in normalised device units.
    pub grad2d: Vec<f64>,
}

pub fn render(prims: &[DeformedPrimitive], cam: &Camera, mode: RasterMode) -> Frame {
    let mut splats = Vec::new();
    let mut jacobians = Vec::new();
    let mut primitive_of = Vec::new();
    for (k, p) in prims.iter().enumerate() {
        if let Some(ps) = project(p.position, p.cov, p.color, p.opacity, k, cam) {
            splats.push(ps.splat);
            jacobians.push(ps.jacobian);
            primitive_of.push(k);
        }
    }
    let output = match mode {
        RasterMode::Tiled => rasterize(&splats, cam.width, cam.height),
        RasterMode::BruteForce => rasterize_bruteforce(&splats, cam.width, cam.height),
    };
    Frame {
        splats,
        jacobians,
        primitive_of,
        output,
        primitive_count: prims.len(),
    }
}

impl Frame {
    pub fn image(&self) -> &[f64] {
        &self.output.image
    }

    /// Ψ per primitive (0 for culled ones).
    pub fn psi(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.primitive_count];
        for (s, &k) in self.primitive_of.iter().enumerate() {
            out[k] = self.output.psi[s];
        }
        out
    }

    pub fn visible(&self) -> Vec<bool> {
        let mut out = vec![false; self.primitive_count];
        for &k in &self.primitive_of {
            out[k] = true;
        }
        out
    }

    pub fn backward(&self, d_image: &[f64]) -> Result<PrimitiveGrads> {
        if d_image.len() != self.output.image.len() {
            return Err(CoreError::Contract(format!(
                "image gradient has {} values, expected {}",
                d_image.len(),
                self.output.image.len()
            )));
        }
        let n = self.primitive_count;
        let mut g = PrimitiveGrads {
            position: vec![[0.0; 3]; n],
            cov: vec![[0.0; 6]; n],
            color: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            grad2d: vec![0.0; n],
        };
        let (hw, hh) = (0.5 * self.output.width as f64, 0.5 * self.output.height as f64);
        let sg = self.output.backward(&self.splats, d_image);
        for (s, grad) in sg.iter().enumerate() {
            let k = self.primitive_of[s];
            let dcov = grad.cov(&self.splats[s]);
            let outs = [grad.mean[0], grad.mean[1], dcov[0], dcov[1], dcov[2]];
            let jac = &self.jacobians[s];
            for v in 0..9 {
                let d: f64 = (0..5).map(|r| outs[r] * jac[r][v]).sum();
                if v < 3 {
                    g.position[k][v] = d;
                } else {
                    g.cov[k][v - 3] = d;
                }
            }
            g.color[k] = grad.color;
            g.opacity[k] = grad.opacity;
            g.grad2d[k] = (grad.mean[0] * hw).hypot(grad.mean[1] * hh);
        }
        Ok(g)
    }
}

/// Stateful wrapper that refuses a backward pass before any forward pass.
#[derive(Debug, Clone)]
pub struct Renderer {
    pub mode: RasterMode,
    last: Option<Frame>,
}

impl Renderer {
    pub fn new(mode: RasterMode) -> Self {
        Self { mode, last: None }
    }

    pub fn forward(&mut self, prims: &[DeformedPrimitive], cam: &Camera) -> &Frame {
        self.last.insert(render(prims, cam, self.mode))
    }

    pub fn backward(&self, d_image: &[f64]) -> Result<PrimitiveGrads> {
        match &self.last {
            Some(f) => f.backward(d_image),
            None => Err(CoreError::Contract("render backward called before forward".into())),
        }
    }
}

/// Per-render side information produced by [`render_node`].
#[derive(Debug, Clone)]
pub struct RenderStats {
    pub psi: Vec<f64>,
    pub visible: Vec<bool>,
    /// Filled when the graph's backward pass reaches the render node.
    pub grad2d: Rc<RefCell<Vec<f64>>>,
}

/// Render primitives held in graph nodes (`[P,3]`, `[P,6]`, `[P,3]`, `[P,1]`)
/// into an `[H, W, 3]` image node.
pub fn render_node<T: Real>(
    g: &mut Graph<T>,
    position: NodeId,
    cov: NodeId,
    color: NodeId,
    opacity: NodeId,
    cam: &Camera,
    mode: RasterMode,
) -> Result<(NodeId, RenderStats)> {
    let n = g.value(position).rows();
    for (node, cols) in [(position, 3), (cov, 6), (color, 3), (opacity, 1)] {
        let v = g.value(node);
        if v.len() != n * cols {
            return Err(CoreError::Contract(format!(
                "render input has shape {:?}, expected [{n}, {cols}]",
                v.shape()
            )));
        }
    }
    let f = |node: NodeId| -> Vec<f64> { g.value(node).data().iter().map(|v| v.f64()).collect() };
    let (pv, cv, colv, ov) = (f(position), f(cov), f(color), f(opacity));
    let prims: Vec<DeformedPrimitive> = (0..n)
        .map(|k| DeformedPrimitive {
            position: [pv[3 * k], pv[3 * k + 1], pv[3 * k + 2]],
            cov: std::array::from_fn(|i| cv[6 * k + i]),
            color: [colv[3 * k], colv[3 * k + 1], colv[3 * k + 2]],
            opacity: ov[k],
        })
        .collect();
    let frame = render(&prims, cam, mode);
    let stats = RenderStats {
        psi: frame.psi(),
        visible: frame.visible(),
        grad2d: Rc::new(RefCell::new(vec![0.0; n])),
    };
    let image = Tensor::new(
        vec![cam.height, cam.width, 3],
        frame.image().iter().map(|&v| T::of(v)).collect(),
    )?;
    let slot = stats.grad2d.clone();
    let node = g.custom(
        &[position, cov, color, opacity],
        image,
        Box::new(move |gout: &[T]| {
            let d: Vec<f64> = gout.iter().map(|v| v.f64()).collect();
            let pg = frame.backward(&d).expect("image gradient matches forward shape");
            *slot.borrow_mut() = pg.grad2d.clone();
            let cast = |v: Vec<f64>| Some(v.into_iter().map(T::of).collect::<Vec<T>>());
            vec![
                cast(pg.position.concat()),
                cast(pg.cov.concat()),
                cast(pg.color.concat()),
                cast(pg.opacity),
            ]
        }),
    );
    Ok((node, stats))
}

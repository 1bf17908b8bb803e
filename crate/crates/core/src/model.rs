//! The full model: canonical anchors, deformation networks and entropy
//! model, with frame assembly on the tape and snapshot I/O.

use std::io::{Read, Write};
use std::path::Path;

use adcgs_tensor::{
    read_checkpoint, CheckpointWriter, Graph, NodeId, Parameters, Real, Tensor,
};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::canonical::{
    derive_nodes, init_canonical, AnchorNodes, AnchorSet, CanonicalSpace, PrimitiveNodes,
};
use crate::codec::mem::{rate_nodes, EntropyModel, RateNodes};
use crate::config::ModelConfig;
use crate::deformation::{
    coarse_nodes, compose_nodes, fine_nodes, positional_embedding_node, time_embedding_node,
    DeformationNets, DeformedPrimitive,
};
use crate::error::{CoreError, Result};
use crate::renderer::{render, render_node, Camera, Frame, RasterMode, RenderStats};

/// Which parts of the pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub coarse: bool,
    pub fine: bool,
}

impl Stages {
    pub const CANONICAL: Stages = Stages {
        coarse: false,
        fine: false,
    };
    pub const COARSE: Stages = Stages {
        coarse: true,
        fine: false,
    };
    pub const FULL: Stages = Stages {
        coarse: true,
        fine: true,
    };

    pub fn flags(self) -> u16 {
        self.coarse as u16 | (self.fine as u16) << 1
    }

    pub fn from_flags(f: u16) -> Self {
        Stages {
            coarse: f & 1 != 0,
            fine: f & 2 != 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub canonical: CanonicalSpace<T>,
    pub deformation: DeformationNets<T>,
    pub mem: EntropyModel<T>,
    /// Scene bounds `[min x, min y, min z, max x, max y, max z]`.
    pub bbox: [f32; 6],
    /// Stages the model renders with.
    pub stages: Stages,
}

/// Graph nodes of one rendered frame.
pub struct FrameNodes {
    pub image: NodeId,
    pub stats: RenderStats,
    pub primitives: PrimitiveNodes,
    pub rate: Option<RateNodes>,
    pub time_clamped: bool,
}

pub fn bbox_of(points: &[[f64; 3]]) -> [f32; 6] {
    let mut b = [f32::INFINITY, f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY];
    for p in points {
        for a in 0..3 {
            b[a] = b[a].min(p[a] as f32);
            b[a + 3] = b[a + 3].max(p[a] as f32);
        }
    }
    b
}

impl<T: Real> Model<T> {
    /// Canonical space from `points`, identity deformation, fresh entropy model.
    pub fn new<R: Rng + ?Sized>(
        points: &[[f64; 3]],
        voxel_size: f64,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let canonical = init_canonical(points, voxel_size, cfg, rng)?;
        let deformation = DeformationNets::new(cfg, rng)?;
        let mem = EntropyModel::new(cfg, rng)?;
        Ok(Self {
            config: cfg.clone(),
            canonical,
            deformation,
            mem,
            bbox: bbox_of(points),
            stages: Stages::CANONICAL,
        })
    }

    pub fn anchors(&self) -> &AnchorSet<T> {
        &self.canonical.anchors
    }

    pub fn anchor_count(&self) -> usize {
        self.canonical.anchors.len()
    }

    pub fn primitive_count(&self) -> usize {
        self.canonical.primitive_count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            canonical: CanonicalSpace {
                anchors: self.canonical.anchors.cast(),
                f_theta: self.canonical.f_theta.cast(),
                voxel_size: self.canonical.voxel_size,
                k: self.canonical.k,
            },
            deformation: self.deformation.cast(),
            mem: self.mem.cast(),
            bbox: self.bbox,
            stages: self.stages,
        }
    }

    /// Anchor attributes bound as trainable parameters; positions are constant.
    pub fn anchor_nodes(&self, g: &mut Graph<T>) -> AnchorNodes {
        let a = &self.canonical.anchors;
        AnchorNodes {
            position: g.input(a.positions.clone()),
            cov: g.param("anchor.cov", &a.cov),
            color: g.param("anchor.color", &a.color),
            f_v: g.param("anchor.f_v", &a.f_v),
            f_g: g.param("anchor.f_g", &a.f_g),
        }
    }

    /// Primitive nodes of frame `t` from the given anchor nodes.
    pub fn primitive_nodes(
        &self,
        g: &mut Graph<T>,
        anchors: &AnchorNodes,
        t: f64,
        stages: Stages,
    ) -> Result<(PrimitiveNodes, bool)> {
        let k = self.canonical.k;
        let prims = derive_nodes(g, &self.canonical.f_theta, anchors, k)?;
        if !stages.coarse && !stages.fine {
            return Ok((prims, false));
        }
        let nets = &self.deformation;
        let (f_t, clamped) = time_embedding_node(g, nets, t)?;
        let coarse = if stages.coarse {
            coarse_nodes(g, nets, anchors.f_v, f_t)?
        } else {
            let zeros = |g: &mut Graph<T>, c| g.input(Tensor::zeros(&[g.value(anchors.f_v).rows(), c]));
            crate::deformation::CoarseNodes {
                d_position: zeros(g, 3),
                d_cov: zeros(g, 6),
                d_color: zeros(g, 3),
            }
        };
        let fine = if stages.fine {
            // The fine stage sees the coarse-deformed anchor position. The
            // offset is detached: gradients through the top embedding bands
            // are scaled by up to 2048 and destabilize the coarse network.
            let dx = g.detach(coarse.d_position);
            let x = g.add(anchors.position, dx)?;
            let f_p = positional_embedding_node(g, x)?;
            Some(fine_nodes(g, nets, f_p, f_t)?)
        } else {
            None
        };
        Ok((compose_nodes(g, &prims, &coarse, fine.as_ref(), k)?, clamped))
    }

    /// Trainable frame: optional noisy quantization with rate, deformation,
    /// rasterization. `rate` carries the noise source (`None` disables the
    /// rate term entirely).
    pub fn frame_nodes(
        &self,
        g: &mut Graph<T>,
        t: f64,
        cam: &Camera,
        stages: Stages,
        mode: RasterMode,
        rate: Option<Option<&mut dyn RngCore>>,
    ) -> Result<FrameNodes> {
        let anchors = self.anchor_nodes(g);
        let (anchors, rate) = match rate {
            Some(rng) => {
                let r = rate_nodes(g, &self.mem, &anchors, rng)?;
                (r.anchors, Some(r))
            }
            None => (anchors, None),
        };
        let (primitives, time_clamped) = self.primitive_nodes(g, &anchors, t, stages)?;
        let (image, stats) = render_node(
            g,
            primitives.position,
            primitives.cov,
            primitives.color,
            primitives.opacity,
            cam,
            mode,
        )?;
        Ok(FrameNodes {
            image,
            stats,
            primitives,
            rate,
            time_clamped,
        })
    }

    /// Renderable primitives of frame `t` under the model's own stages.
    pub fn deformed_primitives(&self, t: f64) -> Result<Vec<DeformedPrimitive>> {
        let mut g = Graph::new();
        let a = &self.canonical.anchors;
        let nodes = AnchorNodes {
            position: g.input(a.positions.clone()),
            cov: g.input(a.cov.clone()),
            color: g.input(a.color.clone()),
            f_v: g.input(a.f_v.clone()),
            f_g: g.input(a.f_g.clone()),
        };
        let (p, _) = self.primitive_nodes(&mut g, &nodes, t, self.stages)?;
        let f = |n: NodeId| g.value(n).data().iter().map(|v| v.f64()).collect::<Vec<f64>>();
        let (x, s, c, o) = (f(p.position), f(p.cov), f(p.color), f(p.opacity));
        Ok((0..o.len())
            .map(|i| DeformedPrimitive {
                position: [x[3 * i], x[3 * i + 1], x[3 * i + 2]],
                cov: std::array::from_fn(|j| s[6 * i + j]),
                color: [c[3 * i], c[3 * i + 1], c[3 * i + 2]],
                opacity: o[i],
            })
            .collect())
    }

    pub fn render(&self, t: f64, cam: &Camera, mode: RasterMode) -> Result<Frame> {
        Ok(render(&self.deformed_primitives(t)?, cam, mode))
    }

    /// Every tensor except the hyper encoder, in a fixed order: what a
    /// decoder needs besides the coded anchor attributes.
    pub fn visit_networks(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.canonical.f_theta.visit(f);
        self.deformation.visit(f);
        self.mem.visit_decoder(f);
    }

    pub fn visit_networks_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.canonical.f_theta.visit_mut(f);
        self.deformation.visit_mut(f);
        self.mem.visit_decoder_mut(f);
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.canonical.anchors.visit(f);
        self.canonical.f_theta.visit(f);
        self.deformation.visit(f);
        self.mem.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.canonical.anchors.visit_mut(f);
        self.canonical.f_theta.visit_mut(f);
        self.deformation.visit_mut(f);
        self.mem.visit_mut(f);
    }
}

/// Snapshot metadata, stored as UTF-8 bytes in the `meta.json` tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotMeta {
    config: ModelConfig,
    voxel_size: f64,
    bbox: [f32; 6],
    stages: Stages,
}

const META_TENSOR: &str = "meta.json";

impl<T: Real> Model<T> {
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = serde_json::to_vec(&SnapshotMeta {
            config: self.config.clone(),
            voxel_size: self.canonical.voxel_size,
            bbox: self.bbox,
            stages: self.stages,
        })?;
        let mut cw = CheckpointWriter::new();
        let bytes: Vec<f32> = meta.iter().map(|&b| b as f32).collect();
        cw.add(META_TENSOR, &Tensor::new(vec![bytes.len()], bytes)?);
        self.visit(&mut |name, t| cw.add(name, t));
        cw.write(w)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let ck = read_checkpoint(r)?;
        let meta_t = ck.get::<f64>(META_TENSOR)?;
        let bytes: Vec<u8> = meta_t.data().iter().map(|&b| b as u8).collect();
        let meta: SnapshotMeta = serde_json::from_slice(&bytes)
            .map_err(|e| CoreError::Data(format!("snapshot metadata: {e}")))?;
        meta.config.validate()?;
        let mut model = Self::skeleton(&meta.config, meta.voxel_size)?;
        model.bbox = meta.bbox;
        model.stages = meta.stages;
        let mut err = None;
        model.visit_mut(&mut |name, t| match ck.get::<T>(name) {
            Ok(v) if name.starts_with("anchor.") || v.shape() == t.shape() => {
                let rg = t.requires_grad;
                *t = v;
                t.requires_grad = rg;
            }
            Ok(v) => {
                err.get_or_insert(CoreError::Data(format!(
                    "snapshot tensor {name} has shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
            Err(e) => {
                err.get_or_insert(CoreError::Data(e.to_string()));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let a = &model.canonical.anchors;
        let n = a.positions.rows();
        if [&a.cov, &a.color, &a.f_v, &a.f_g].iter().any(|t| t.rows() != n) {
            return Err(CoreError::Data("snapshot anchor tables disagree in length".into()));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_snapshot(&mut f)
    }

    /// A model with the right network shapes and no anchors; every tensor is
    /// expected to be overwritten.
    pub fn skeleton(cfg: &ModelConfig, voxel_size: f64) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let canonical = CanonicalSpace {
            anchors: AnchorSet::empty(cfg.n_v, cfg.f_g_len()),
            f_theta: adcgs_tensor::Mlp::zeros("f_theta", crate::canonical::f_theta_spec(cfg)?)?,
            voxel_size: voxel_size as f32 as f64,
            k: cfg.k,
        };
        Ok(Self {
            config: cfg.clone(),
            canonical,
            deformation: DeformationNets::new(cfg, &mut rng)?,
            mem: EntropyModel::new(cfg, &mut rng)?,
            bbox: [0.0; 6],
            stages: Stages::CANONICAL,
        })
    }
}

//! Synthetic dynamic scenes: rigidly moving Gaussian blobs seen by a ring
//! of cameras, with ground truth from the brute-force rasterizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::deformation::DeformedPrimitive;
use crate::error::{CoreError, Result};
use crate::renderer::ppm::to_u8;
use crate::renderer::project::rotation_from_axis_angle;
use crate::renderer::{render, Camera, RasterMode};

/// One rigid blob made of `parts` textured sub-Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub center: [f64; 3],
    /// Per-axis radius of the blob.
    pub scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
    #[serde(default = "default_parts")]
    pub parts: usize,
    /// Translation `Σ c_i·t^(i+1)`.
    #[serde(default)]
    pub translation: Vec<[f64; 3]>,
    /// Rotation angle `Σ a_i·t^(i+1)` about `axis` through `pivot`.
    #[serde(default)]
    pub rotation: Vec<f64>,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub pivot: [f64; 3],
}

fn default_parts() -> usize {
    6
}

fn default_axis() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub look_at: [f64; 3],
    pub fov_deg: f64,
    /// Held-out camera indices.
    pub eval: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// `[min x, min y, min z, max x, max y, max z]`.
    pub bbox: [f64; 6],
    pub cameras: CameraRing,
    pub blobs: Vec<BlobSpec>,
    pub points_per_blob: usize,
    pub point_jitter: f64,
}

pub const STANDARD_SCENES: [&str; 3] = ["two-blobs-orbit", "rigid-cluster-shift", "static-control"];

fn ring(count: usize, eval: Vec<usize>) -> CameraRing {
    CameraRing {
        count,
        radius: 3.5,
        height: 1.0,
        look_at: [0.0, 0.0, 0.0],
        fov_deg: 40.0,
        eval,
    }
}

fn blob(center: [f64; 3], scale: f64, color: [f64; 3]) -> BlobSpec {
    BlobSpec {
        center,
        scale: [scale; 3],
        color,
        opacity: 0.9,
        parts: default_parts(),
        translation: Vec::new(),
        rotation: Vec::new(),
        axis: default_axis(),
        pivot: [0.0; 3],
    }
}

impl SceneSpec {
    /// One of the shipped toy scenes at the given image size.
    pub fn standard(name: &str, size: usize) -> Result<Self> {
        let base = |blobs, cameras| SceneSpec {
            name: name.to_string(),
            seed: 7,
            frames: 8,
            width: size,
            height: size,
            bbox: [-1.5, -1.5, -1.5, 1.5, 1.5, 1.5],
            cameras,
            blobs,
            points_per_blob: 300,
            point_jitter: 0.02,
        };
        Ok(match name {
            "two-blobs-orbit" => {
                let mut a = blob([0.6, 0.0, 0.0], 0.3, [0.9, 0.3, 0.2]);
                let mut b = blob([-0.6, 0.0, 0.0], 0.3, [0.2, 0.5, 0.9]);
                for x in [&mut a, &mut b] {
                    x.rotation = vec![std::f64::consts::FRAC_PI_2];
                }
                base(vec![a, b], ring(6, vec![5]))
            }
            "rigid-cluster-shift" => {
                let mut r = ChaCha8Rng::seed_from_u64(12);
                let blobs = (0..12)
                    .map(|_| {
                        let c = std::array::from_fn(|_| r.gen_range(-0.4..0.4));
                        let col = std::array::from_fn(|_| r.gen_range(0.15..0.95));
                        let mut b = blob(c, 0.12, col);
                        b.parts = 3;
                        b.translation = vec![[0.6, 0.0, 0.0]];
                        b.center[0] -= 0.3;
                        b
                    })
                    .collect();
                let mut s = base(blobs, ring(6, vec![5]));
                s.points_per_blob = 80;
                s
            }
            "static-control" => base(
                vec![blob([0.3, 0.0, 0.0], 0.35, [0.8, 0.7, 0.2]), blob([-0.4, 0.1, 0.2], 0.25, [0.3, 0.8, 0.4])],
                ring(6, vec![5]),
            ),
            other => {
                return Err(CoreError::Config(format!(
                    "unknown scene {other:?}; expected one of {STANDARD_SCENES:?}"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return bad("frames and image size must be positive".into());
        }
        if self.cameras.count == 0 || self.cameras.eval.iter().any(|&e| e >= self.cameras.count) {
            return bad("camera ring needs at least one camera and valid eval indices".into());
        }
        if self.cameras.eval.len() >= self.cameras.count {
            return bad("at least one camera must remain for training".into());
        }
        if self.blobs.is_empty() {
            return bad("scene has no blobs".into());
        }
        let b = &self.bbox;
        if (0..3).any(|a| b[a] >= b[a + 3]) {
            return bad("bbox minimum must be below maximum".into());
        }
        for (i, bl) in self.blobs.iter().enumerate() {
            if bl.parts == 0 || bl.scale.iter().any(|s| !(*s > 0.0)) || !(0.0..=1.0).contains(&bl.opacity) {
                return bad(format!("blob {i}: parts, scale and opacity must be valid"));
            }
            if bl.axis.iter().all(|v| *v == 0.0) && !bl.rotation.is_empty() {
                return bad(format!("blob {i}: rotation axis is zero"));
            }
            for step in 0..=100 {
                let t = step as f64 / 100.0;
                let c = bl.pose(t).apply(bl.center);
                if (0..3).any(|a| c[a] < b[a] || c[a] > b[a + 3]) {
                    return bad(format!("blob {i} leaves the bbox at t = {t}"));
                }
            }
        }
        Ok(())
    }

    /// Normalised timestamp of frame `f`.
    pub fn time(&self, f: usize) -> f64 {
        if self.frames == 1 {
            0.0
        } else {
            f as f64 / (self.frames - 1) as f64
        }
    }

    pub fn camera(&self, i: usize) -> Result<Camera> {
        let r = &self.cameras;
        let a = std::f64::consts::TAU * i as f64 / r.count as f64;
        let eye = [
            r.look_at[0] + r.radius * a.sin(),
            r.look_at[1] - r.height,
            r.look_at[2] - r.radius * a.cos(),
        ];
        Camera::look_at(eye, r.look_at, [0.0, -1.0, 0.0], r.fov_deg, self.width, self.height)
    }

    pub fn train_cameras(&self) -> Vec<usize> {
        (0..self.cameras.count).filter(|i| !self.cameras.eval.contains(i)).collect()
    }
}

/// A rigid transform `x ↦ R(x − pivot) + pivot + d`.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub pivot: [f64; 3],
    pub shift: [f64; 3],
}

impl Pose {
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let r = rotation_from_axis_angle(self.rotation);
        let d = [x[0] - self.pivot[0], x[1] - self.pivot[1], x[2] - self.pivot[2]];
        std::array::from_fn(|i| {
            r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2] + self.pivot[i] + self.shift[i]
        })
    }
}

impl BlobSpec {
    pub fn pose(&self, t: f64) -> Pose {
        let angle: f64 = self.rotation.iter().enumerate().map(|(i, a)| a * t.powi(i as i32 + 1)).sum();
        let n = self.axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rotation = if n > 0.0 { self.axis.map(|v| v / n * angle) } else { [0.0; 3] };
        let mut shift = [0.0; 3];
        for (i, c) in self.translation.iter().enumerate() {
            let p = t.powi(i as i32 + 1);
            for a in 0..3 {
                shift[a] += c[a] * p;
            }
        }
        Pose {
            rotation,
            pivot: self.pivot,
            shift,
        }
    }
}

/// Sub-Gaussians of every blob in their rest pose.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    parts: Vec<(usize, DeformedPrimitive)>,
}

impl GroundTruth {
    pub fn new(spec: &SceneSpec) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut parts = Vec::new();
        for (bi, b) in spec.blobs.iter().enumerate() {
            for _ in 0..b.parts {
                let off: [f64; 3] = std::array::from_fn(|a| {
                    let z: f64 = r.sample(StandardNormal);
                    0.45 * b.scale[a] * z.clamp(-2.0, 2.0)
                });
                let color = b.color.map(|c| (c + r.gen_range(-0.15..0.15)).clamp(0.0, 1.0));
                let spin: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
                let sc: [f64; 3] = std::array::from_fn(|a| (0.5 * b.scale[a] * r.gen_range(0.7..1.3)).ln());
                parts.push((
                    bi,
                    DeformedPrimitive {
                        position: std::array::from_fn(|a| b.center[a] + off[a]),
                        cov: [sc[0], sc[1], sc[2], spin[0], spin[1], spin[2]],
                        color,
                        opacity: b.opacity,
                    },
                ));
            }
        }
        Self { parts }
    }

    /// Posed primitives at time `t`.
    pub fn at(&self, spec: &SceneSpec, t: f64) -> Vec<DeformedPrimitive> {
        self.parts
            .iter()
            .map(|(bi, p)| {
                let pose = spec.blobs[*bi].pose(t);
                let rot = compose_axis_angle(pose.rotation, [p.cov[3], p.cov[4], p.cov[5]]);
                DeformedPrimitive {
                    position: pose.apply(p.position),
                    cov: [p.cov[0], p.cov[1], p.cov[2], rot[0], rot[1], rot[2]],
                    ..*p
                }
            })
            .collect()
    }

    /// 8-bit-quantised ground-truth image, values in `[0, 1]`.
    pub fn image(&self, spec: &SceneSpec, cam: &Camera, t: f64) -> Vec<f64> {
        let frame = render(&self.at(spec, t), cam, RasterMode::BruteForce);
        frame.image().iter().map(|&v| to_u8(v) as f64 / 255.0).collect()
    }
}

/// Axis-angle of `R(a)·R(b)`.
fn compose_axis_angle(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let (ra, rb) = (rotation_from_axis_angle(a), rotation_from_axis_angle(b));
    let m: [[f64; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| ra[i][k] * rb[k][j]).sum()));
    let cos = ((m[0][0] + m[1][1] + m[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let th = cos.acos();
    let v = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if th < 1e-9 {
        return v.map(|x| 0.5 * x);
    }
    let s = th.sin();
    if s > 1e-6 {
        return v.map(|x| x * th / (2.0 * s));
    }
    // Angle near π: axis from the diagonal.
    let d = [m[0][0], m[1][1], m[2][2]];
    let i = (0..3).max_by(|&x, &y| d[x].total_cmp(&d[y])).unwrap_or(0);
    let mut axis = [0.0; 3];
    axis[i] = ((d[i] + 1.0) * 0.5).max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = (m[i][j] + m[j][i]) / (4.0 * axis[i]);
        }
    }
    axis.map(|x| x * th)
}

/// Points on blob surfaces at `t = 0` with seeded jitter.
pub fn init_points(spec: &SceneSpec) -> Vec<[f64; 3]> {
    let mut r = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x706f_696e);
    let mut out = Vec::new();
    for b in &spec.blobs {
        for _ in 0..spec.points_per_blob {
            let d: [f64; 3] = std::array::from_fn(|_| r.sample(StandardNormal));
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let p: [f64; 3] = std::array::from_fn(|a| {
                let j: f64 = r.sample(StandardNormal);
                b.center[a] + b.scale[a] * d[a] / n + spec.point_jitter * j
            });
            out.push(p);
        }
    }
    let bb = spec.bbox;
    out.into_iter()
        .map(|p| std::array::from_fn(|a| p[a].clamp(bb[a], bb[a + 3])))
        .collect()
}

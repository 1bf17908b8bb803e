//! Scene datasets in memory and on disk (PPM images plus a JSON manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::{init_points, GroundTruth, SceneSpec};
use crate::error::{CoreError, Result};
use crate::renderer::ppm::{encode_ppm, read_ppm};
use crate::renderer::Camera;
use crate::trainer::TrainingView;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scene: String,
    pub seed: u64,
    pub times: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub bbox: [f64; 6],
    pub cameras: Vec<Camera>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub init_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub manifest: Manifest,
    /// `images[camera][frame]`, interleaved `[H, W, 3]`.
    pub images: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(CoreError::Config(format!("unknown split {other:?}; expected train or eval"))),
        }
    }
}

fn image_name(camera: usize, frame: usize) -> String {
    format!("cam{camera:02}_f{frame:03}.ppm")
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let gt = GroundTruth::new(spec);
    let cameras = (0..spec.cameras.count).map(|i| spec.camera(i)).collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = (0..spec.frames).map(|f| spec.time(f)).collect();
    let images = cameras
        .iter()
        .map(|cam| times.iter().map(|&t| gt.image(spec, cam, t)).collect())
        .collect();
    Ok(SceneDataset {
        manifest: Manifest {
            scene: spec.name.clone(),
            seed: spec.seed,
            times,
            width: spec.width,
            height: spec.height,
            bbox: spec.bbox,
            cameras,
            train: spec.train_cameras(),
            eval: spec.cameras.eval.clone(),
            init_points: init_points(spec),
        },
        images,
    })
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let bad = |s: String| Err(CoreError::Data(s));
        if self.images.len() != m.cameras.len() || self.images.iter().any(|f| f.len() != m.times.len()) {
            return bad("every (camera, frame) pair needs exactly one image".into());
        }
        let n = m.width * m.height * 3;
        if self.images.iter().flatten().any(|im| im.len() != n) {
            return bad(format!("images must be {}x{}", m.width, m.height));
        }
        if m.cameras.iter().any(|c| c.width != m.width || c.height != m.height) {
            return bad("camera resolution differs from the image size".into());
        }
        if m.train.iter().chain(&m.eval).any(|&c| c >= m.cameras.len()) {
            return bad("split refers to a missing camera".into());
        }
        if m.init_points.is_empty() {
            return bad("dataset has no initial points".into());
        }
        let b = m.bbox;
        if m.init_points.iter().any(|p| (0..3).any(|a| !(p[a] >= b[a] && p[a] <= b[a + 3]))) {
            return bad("initial points lie outside the bbox".into());
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.manifest.train,
            Split::Eval => &self.manifest.eval,
        }
    }

    /// Every `(camera, frame)` view of a split, camera-major.
    pub fn views(&self, split: Split) -> Vec<TrainingView> {
        let m = &self.manifest;
        self.split(split)
            .iter()
            .flat_map(|&c| {
                m.times.iter().enumerate().map(move |(f, &t)| TrainingView {
                    camera: m.cameras[c].clone(),
                    t,
                    image: self.images[c][f].clone(),
                })
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir.join("images"))?;
        let m = &self.manifest;
        for (c, frames) in self.images.iter().enumerate() {
            for (f, im) in frames.iter().enumerate() {
                fs::write(dir.join("images").join(image_name(c, f)), encode_ppm(im, m.width, m.height))?;
            }
        }
        let json = serde_json::to_vec_pretty(m).map_err(|e| CoreError::Data(e.to_string()))?;
        fs::write(dir.join(MANIFEST), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read(dir.join(MANIFEST))
            .map_err(|e| CoreError::Data(format!("reading {}: {e}", dir.join(MANIFEST).display())))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| CoreError::Data(format!("manifest: {e}")))?;
        let mut images = Vec::with_capacity(manifest.cameras.len());
        for c in 0..manifest.cameras.len() {
            let mut frames = Vec::with_capacity(manifest.times.len());
            for f in 0..manifest.times.len() {
                let path = dir.join("images").join(image_name(c, f));
                let bytes = fs::read(&path).map_err(|e| CoreError::Data(format!("reading {}: {e}", path.display())))?;
                let (im, w, h) = read_ppm(&mut bytes.as_slice())?;
                if (w, h) != (manifest.width, manifest.height) {
                    return Err(CoreError::Data(format!("{} is {w}x{h}", path.display())));
                }
                frames.push(im);
            }
            images.push(frames);
        }
        let d = Self { manifest, images };
        d.validate()?;
        Ok(d)
    }
}

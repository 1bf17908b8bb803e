//! Per-view quality of a model against a dataset split.

use serde::{Deserialize, Serialize};

use super::dataset::{SceneDataset, Split};
use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::model::Model;
use crate::renderer::RasterMode;
use adcgs_tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub camera: usize,
    pub frame: usize,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub fn evaluate<T: Real>(model: &Model<T>, data: &SceneDataset, split: Split) -> Result<EvalReport> {
    let m = &data.manifest;
    let mut rows = Vec::new();
    for &c in data.split(split) {
        for (f, &t) in m.times.iter().enumerate() {
            let frame = model.render(t, &m.cameras[c], RasterMode::Tiled)?;
            let gt = &data.images[c][f];
            rows.push(EvalRow {
                camera: c,
                frame: f,
                t,
                psnr: psnr(frame.image(), gt)?,
                ssim: ssim(frame.image(), gt, m.width, m.height)?,
            });
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
    })
}

//! Rate-distortion sweeps and the end-to-end pipeline.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{generate_scene, SceneDataset, Split};
use super::eval::evaluate;
use super::plot::line_plot;
use super::scene::SceneSpec;
use crate::codec::container::{decode_model, encode_model};
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::renderer::ppm::encode_ppm;
use crate::trainer::{train, write_csv, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_e: f64,
    pub size_bytes: Option<usize>,
    pub psnr: Option<f64>,
    pub fps_deform_eval: Option<f64>,
    pub status: String,
}

/// Everything one sweep point produces.
pub struct SweepPoint {
    pub row: SweepRow,
    pub bitstream: Vec<u8>,
    pub train_psnr: f64,
}

/// Deformed frames per second over the eval timestamps.
pub fn deform_fps(model: &Model<f32>, times: &[f64]) -> Result<f64> {
    let start = Instant::now();
    for &t in times {
        std::hint::black_box(model.deformed_primitives(t)?);
    }
    Ok(times.len() as f64 / start.elapsed().as_secs_f64().max(1e-12))
}

/// Train at one `λ_e`, encode, decode, evaluate the decoded model.
pub fn sweep_point(data: &SceneDataset, lambda_e: f64, config: &TrainingConfig) -> Result<SweepPoint> {
    let cfg = TrainingConfig {
        lambda_e,
        ..config.clone()
    };
    let views = data.views(Split::Train);
    let out = train(&views, &data.manifest.init_points, &cfg)?;
    let enc = encode_model(&out.model, lambda_e)?;
    let decoded = decode_model(&enc.bytes)?;
    let eval = evaluate(&decoded, data, Split::Eval)?;
    let train_psnr = evaluate(&decoded, data, Split::Train)?.mean_psnr;
    Ok(SweepPoint {
        row: SweepRow {
            lambda_e,
            size_bytes: Some(enc.bytes.len()),
            psnr: Some(eval.mean_psnr),
            fps_deform_eval: Some(deform_fps(&decoded, &data.manifest.times)?),
            status: "ok".into(),
        },
        bitstream: enc.bytes,
        train_psnr,
    })
}

/// One training run per `λ_e`; failed runs become marked rows. Writes
/// `sweep.csv`, `rd_curve.ppm` and one bitstream per point into `out`.
pub fn rd_sweep(
    data: &SceneDataset,
    lambdas: &[f64],
    config: &TrainingConfig,
    out: Option<&Path>,
    parallel: bool,
) -> Result<Vec<SweepPoint>> {
    if lambdas.len() < 2 {
        return Err(CoreError::Config("an RD sweep needs at least two lambda values".into()));
    }
    let run = |&l: &f64| match sweep_point(data, l, config) {
        Ok(p) => p,
        Err(e) => SweepPoint {
            row: SweepRow {
                lambda_e: l,
                size_bytes: None,
                psnr: None,
                fps_deform_eval: None,
                status: format!("failed: {e}"),
            },
            bitstream: Vec::new(),
            train_psnr: f64::NAN,
        },
    };
    let points: Vec<SweepPoint> = if parallel {
        lambdas.par_iter().map(run).collect()
    } else {
        lambdas.iter().map(run).collect()
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let rows: Vec<&SweepRow> = points.iter().map(|p| &p.row).collect();
        write_csv(fs::File::create(dir.join("sweep.csv"))?, &rows)?;
        let curve: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| Some((p.row.size_bytes? as f64, p.row.psnr?)))
            .collect();
        let (w, h) = (320, 240);
        fs::write(dir.join("rd_curve.ppm"), encode_ppm(&line_plot(&curve, w, h)?, w, h))?;
        for p in points.iter().filter(|p| !p.bitstream.is_empty()) {
            fs::write(dir.join(format!("lambda_{:e}.adcg", p.row.lambda_e)), &p.bitstream)?;
        }
    }
    Ok(points)
}

/// Files written by [`run_pipeline`], read back as bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifacts {
    pub bitstream: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub train_log: Vec<u8>,
    pub metrics: Vec<u8>,
}

/// Generate, train, encode, decode and evaluate into `dir`.
pub fn run_pipeline(spec: &SceneSpec, config: &TrainingConfig, dir: &Path) -> Result<PipelineArtifacts> {
    let data = generate_scene(spec)?;
    data.save(&dir.join("data"))?;
    let data = SceneDataset::load(&dir.join("data"))?;
    let views = data.views(Split::Train);
    let out = train(&views, &data.manifest.init_points, config)?;
    out.model.save(&dir.join("model.ckpt"))?;
    write_csv(fs::File::create(dir.join("train_log.csv"))?, &out.log)?;
    let enc = encode_model(&out.model, config.lambda_e)?;
    fs::write(dir.join("model.adcg"), &enc.bytes)?;
    let decoded = decode_model(&fs::read(dir.join("model.adcg"))?)?;
    let report = evaluate(&decoded, &data, Split::Eval)?;
    write_csv(fs::File::create(dir.join("metrics.csv"))?, &report.rows)?;
    Ok(PipelineArtifacts {
        bitstream: fs::read(dir.join("model.adcg"))?,
        checkpoint: fs::read(dir.join("model.ckpt"))?,
        train_log: fs::read(dir.join("train_log.csv"))?,
        metrics: fs::read(dir.join("metrics.csv"))?,
    })
}

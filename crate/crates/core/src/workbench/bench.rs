//! Coarse-stage cost of anchor-shared deformation against a per-Gaussian
//! baseline that runs the same network once per primitive.

use std::time::Instant;

use adcgs_tensor::{Graph, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::canonical::anchor_index;
use crate::deformation::{coarse_nodes, time_embedding_node};
use crate::error::{CoreError, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub anchors: usize,
    pub primitives: usize,
    pub frames: usize,
    /// Coarse-network rows evaluated by the anchor-driven path.
    pub coarse_evals: u64,
    /// Coarse-network rows evaluated by the per-Gaussian baseline.
    pub baseline_coarse_evals: u64,
    /// Fine-network rows per frame set (one per primitive).
    pub fine_evals: u64,
    pub coarse_seconds: f64,
    pub baseline_coarse_seconds: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.baseline_coarse_seconds / self.coarse_seconds.max(1e-12)
    }
}

/// Time both coarse strategies over `frames`, best of `repeats` passes each.
pub fn bench_deformation<T: Real>(model: &Model<T>, frames: &[f64], repeats: usize) -> Result<BenchReport> {
    if frames.is_empty() || repeats == 0 {
        return Err(CoreError::Config("benchmark needs at least one frame and one repeat".into()));
    }
    let nets = &model.deformation;
    let k = model.canonical.k;
    let f_v = &model.canonical.anchors.f_v;
    let a = f_v.rows();
    let per_gaussian = {
        let mut g = Graph::<T>::new();
        let x = g.input(f_v.clone());
        let rep = g.gather_rows(x, anchor_index(a, k))?;
        g.value(rep).clone()
    };
    let run = |input: &Tensor<T>| -> Result<(f64, u64)> {
        let mut best = f64::INFINITY;
        let before = nets.counters.coarse();
        for _ in 0..repeats {
            let start = Instant::now();
            for &t in frames {
                let mut g = Graph::<T>::new();
                let (f_t, _) = time_embedding_node(&mut g, nets, t)?;
                let x = g.input(input.clone());
                let c = coarse_nodes(&mut g, nets, x, f_t)?;
                std::hint::black_box(g.value(c.d_position));
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        Ok((best, (nets.counters.coarse() - before) / repeats as u64))
    };
    let (coarse_seconds, coarse_evals) = run(f_v)?;
    let (baseline_coarse_seconds, baseline_coarse_evals) = run(&per_gaussian)?;
    Ok(BenchReport {
        anchors: a,
        primitives: a * k,
        frames: frames.len(),
        coarse_evals,
        baseline_coarse_evals,
        fine_evals: (a * k * frames.len()) as u64,
        coarse_seconds,
        baseline_coarse_seconds,
    })
}

//! Synthetic scenes, datasets, evaluation, rate-distortion sweeps and
//! deformation benchmarks.

pub mod bench;
pub mod dataset;
pub mod eval;
pub mod plot;
pub mod scene;
pub mod sweep;

pub use bench::{bench_deformation, BenchReport};
pub use dataset::{generate_scene, SceneDataset, Split};
pub use eval::{evaluate, EvalReport, EvalRow};
pub use scene::{SceneSpec, STANDARD_SCENES};
pub use sweep::{rd_sweep, run_pipeline, sweep_point, PipelineArtifacts, SweepPoint, SweepRow};

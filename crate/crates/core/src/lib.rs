//! Anchor-driven deformable Gaussian splatting with rate-distortion
//! optimised compression.

pub mod canonical;
pub mod codec;
pub mod config;
pub mod deformation;
pub mod error;
pub mod metrics;
pub mod model;
pub mod refinement;
pub mod renderer;
pub mod trainer;
pub mod workbench;

pub use config::ModelConfig;
pub use error::{CoreError, Result};

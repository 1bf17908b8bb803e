use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Length of the learnable time grid `Z`.
pub const TIME_GRID: usize = 256;
/// Width of the time embedding `f_t`.
pub const TIME_DIM: usize = 256;
/// Frequency bands per axis in the positional embedding.
pub const PE_BANDS: usize = 12;
/// Width of the positional embedding `f_p`.
pub const PE_DIM: usize = 3 * PE_BANDS * 2;

/// Handling of normalised times outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    /// Clamp and raise a warning flag.
    #[default]
    Strict,
    /// Reject.
    Pedantic,
}

/// Base quantization steps per coded stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSteps {
    pub f_v: f64,
    pub f_g: f64,
    pub cov: f64,
    pub color: f64,
}

impl Default for QuantSteps {
    fn default() -> Self {
        Self {
            f_v: 0.1,
            f_g: 0.1,
            cov: 0.01,
            color: 0.01,
        }
    }
}

/// Architecture hyperparameters shared by every model component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub k: usize,
    pub n_v: usize,
    pub n_g: usize,
    pub m: usize,
    pub theta_hidden: usize,
    pub deform_hidden: usize,
    pub time_hidden: usize,
    pub entropy_hidden: usize,
    pub hyper_dim: usize,
    pub q_steps: QuantSteps,
    pub time_mode: TimeMode,
    pub octree_depth: u8,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_v: 32,
            n_g: 16,
            m: 4,
            theta_hidden: 64,
            deform_hidden: 64,
            time_hidden: 64,
            entropy_hidden: 64,
            hyper_dim: 8,
            q_steps: QuantSteps::default(),
            time_mode: TimeMode::Strict,
            octree_depth: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.k,
            self.n_v,
            self.n_g,
            self.m,
            self.theta_hidden,
            self.deform_hidden,
            self.time_hidden,
            self.entropy_hidden,
            self.hyper_dim,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(CoreError::Config("model dimensions must be positive".into()));
        }
        if (self.k * self.n_g) % self.m != 0 {
            return Err(CoreError::Config(format!(
                "residual feature width {} is not divisible into {} chunks",
                self.k * self.n_g,
                self.m
            )));
        }
        let q = self.q_steps;
        if [q.f_v, q.f_g, q.cov, q.color].iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(CoreError::Config("quantization steps must be positive".into()));
        }
        if !(1..=16).contains(&self.octree_depth) {
            return Err(CoreError::Config("octree depth must be in 1..=16".into()));
        }
        Ok(())
    }

    pub fn f_g_len(&self) -> usize {
        self.k * self.n_g
    }

    pub fn chunk_len(&self) -> usize {
        self.f_g_len() / self.m
    }
}

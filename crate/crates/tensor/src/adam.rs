use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step_count: 0,
            config,
        }
    }

    /// Keep moments of the rows flagged in `keep` (row width `cols`).
    pub fn retain_rows(&mut self, keep: &[bool], cols: usize) {
        for buf in [&mut self.first_moment, &mut self.second_moment] {
            let mut out = Vec::with_capacity(buf.len());
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    out.extend_from_slice(&buf[i * cols..(i + 1) * cols]);
                }
            }
            *buf = out;
        }
    }

    pub fn permute_rows(&mut self, order: &[usize], cols: usize) {
        for buf in [&mut self.first_moment, &mut self.second_moment] {
            let mut out = Vec::with_capacity(buf.len());
            for &i in order {
                out.extend_from_slice(&buf[i * cols..(i + 1) * cols]);
            }
            *buf = out;
        }
    }

    /// Fresh zero moments for appended rows.
    pub fn grow(&mut self, len: usize) {
        self.first_moment.resize(len, T::zero());
        self.second_moment.resize(len, T::zero());
    }
}

/// One bias-corrected Adam step on `param` using `param.grad`.
pub fn adam_update<T: Real>(param: &mut Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    let grad = param
        .grad
        .take()
        .ok_or_else(|| TensorError::Contract("adam_update on a parameter without gradient".into()))?;
    if state.first_moment.len() != param.len() {
        return Err(TensorError::Contract(format!(
            "adam moments hold {} values, parameter has {}",
            state.first_moment.len(),
            param.len()
        )));
    }
    state.step_count += 1;
    let c = state.config;
    let t = state.step_count as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
    let one = T::one();
    for (i, p) in param.data_mut().iter_mut().enumerate() {
        let g = grad[i];
        let m = b1 * state.first_moment[i] + (one - b1) * g;
        let v = b2 * state.second_moment[i] + (one - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    param.grad = Some(grad);
    Ok(())
}

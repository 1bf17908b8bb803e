use rand::Rng;

use crate::error::{dim_err, Result, TensorError};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Layer layout of a fully connected network. Layer `i` maps
/// `layer_widths[i] -> layer_widths[i + 1]`; hidden layers are activated,
/// the output layer is linear. With `residual`, every hidden layer whose
/// input and output widths match adds its input back (`h + act(W h + b)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, residual: bool) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation,
            residual,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.iter().any(|&w| w == 0) {
            return Err(TensorError::Contract(format!(
                "mlp needs at least two positive widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.residual && !(0..self.layers() - 1).any(|i| self.is_skip(i)) {
            return Err(TensorError::Contract(format!(
                "residual mlp needs a hidden layer with matching widths, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn is_skip(&self, layer: usize) -> bool {
        self.residual
            && layer + 1 < self.layers()
            && self.layer_widths[layer] == self.layer_widths[layer + 1]
    }
}

/// A named MLP owning its weights (`[in, out]`) and biases (`[out]`).
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub spec: MlpSpec,
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
    names: Vec<(String, String)>,
}

impl<T: Real> Mlp<T> {
    /// He-style initialisation for ReLU, Xavier for tanh; zero biases.
    pub fn new<R: Rng + ?Sized>(name: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.layers() {
            let (i, o) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            let std = match spec.activation {
                Activation::Relu => (2.0 / i as f64).sqrt(),
                Activation::Tanh => (2.0 / (i + o) as f64).sqrt(),
            };
            weights.push(Tensor::randn(&[i, o], std, rng).param());
            biases.push(Tensor::zeros(&[o]).param());
        }
        Ok(Self::from_parts(name, spec, weights, biases))
    }

    pub fn zeros(name: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = (0..spec.layers())
            .map(|l| Tensor::zeros(&[spec.layer_widths[l], spec.layer_widths[l + 1]]).param())
            .collect();
        let biases = (0..spec.layers())
            .map(|l| Tensor::zeros(&[spec.layer_widths[l + 1]]).param())
            .collect();
        Ok(Self::from_parts(name, spec, weights, biases))
    }

    pub fn from_parts(
        name: &str,
        spec: MlpSpec,
        weights: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
    ) -> Self {
        let names = (0..spec.layers())
            .map(|l| (format!("{name}.w{l}"), format!("{name}.b{l}")))
            .collect();
        Self {
            spec,
            weights,
            biases,
            names,
        }
    }

    pub fn name(&self) -> &str {
        self.names[0].0.trim_end_matches(".w0")
    }

    /// Scale the output layer (weights and bias) by `factor`; `0.0` makes the
    /// network output identically zero.
    pub fn scale_output(&mut self, factor: f64) {
        let last = self.spec.layers() - 1;
        for v in self.weights[last].data_mut() {
            *v *= T::of(factor);
        }
        for v in self.biases[last].data_mut() {
            *v *= T::of(factor);
        }
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor<T> {
        &mut self.biases[layer]
    }

    pub fn weight_name(&self, layer: usize) -> &str {
        &self.names[layer].0
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(|t| t.len()).sum()
    }

    /// Forward on a `[rows, in]` node.
    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let w_in = g.value(x).cols();
        if w_in != self.spec.input_width() {
            return Err(dim_err(
                "mlp_forward",
                format!(
                    "{}: input width {} but first layer expects {}",
                    self.name(),
                    w_in,
                    self.spec.input_width()
                ),
            ));
        }
        let mut h = x;
        for l in 0..self.spec.layers() {
            let h_in = h;
            h = self.layer(g, l, h)?;
            if l + 1 < self.spec.layers() {
                h = match self.spec.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
                if self.spec.is_skip(l) {
                    h = g.add(h_in, h)?;
                }
            }
        }
        Ok(h)
    }

    /// Affine part of layer `l` without activation.
    pub fn layer(&self, g: &mut Graph<T>, l: usize, x: NodeId) -> Result<NodeId> {
        let (wn, bn) = &self.names[l];
        let w = g.param(wn, &self.weights[l]);
        let b = g.param(bn, &self.biases[l]);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }

    /// Convenience forward outside of a training graph.
    pub fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let y = self.forward(&mut g, xi)?;
        Ok(g.value(y).clone())
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(|t| t.cast()).collect(),
            biases: self.biases.iter().map(|t| t.cast()).collect(),
            names: self.names.clone(),
        }
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for l in 0..self.spec.layers() {
            f(&self.names[l].0, &self.weights[l]);
            f(&self.names[l].1, &self.biases[l]);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for l in 0..self.spec.layers() {
            f(&self.names[l].0, &mut self.weights[l]);
            f(&self.names[l].1, &mut self.biases[l]);
        }
    }
}

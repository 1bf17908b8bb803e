//! Dense tensors with tape-based reverse-mode automatic differentiation,
//! fully connected networks, the Adam optimizer and a binary checkpoint
//! format.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod real;
pub mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, Checkpoint, CheckpointWriter};
pub use error::{Result, TensorError};
pub use graph::{sigmoid, CustomBackward, Gradients, Graph, NodeId};
pub use mlp::{Activation, Mlp, MlpSpec};
pub use real::{DType, Real};
pub use tensor::Tensor;

/// Anything that owns named parameter tensors.
pub trait Parameters<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

/// Copy gradients of every bound parameter out of a finished backward pass.
/// Parameters that were never bound get `grad = None`.
pub fn collect_grads<T: Real, P: Parameters<T> + ?Sized>(
    params: &mut P,
    graph: &Graph<T>,
    grads: &Gradients<T>,
) {
    params.visit_mut(&mut |name, t| {
        t.grad = graph.binding(name).map(|id| grads.get(id));
    });
}

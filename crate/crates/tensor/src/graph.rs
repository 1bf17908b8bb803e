//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in execution order, so the
//! node list is already a topological order. [`Graph::backward`] walks it in
//! reverse and accumulates gradients into the inputs of each node.
//!
//! Parameters are bound by name with [`Graph::param`]; after backward the
//! caller copies the gradients of bound names back into its own tensors.

use std::any::TypeId;

use indexmap::IndexMap;

use crate::error::{dim_err, Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom op: receives the output gradient and returns one
/// optional gradient per input, in input order.
pub type CustomBackward<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Ln(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    Clamp(NodeId, Option<T>, Option<T>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId),
    Custom(Vec<NodeId>, CustomBackward<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `node`. Nodes the loss does not depend on
    /// get an all-zero gradient.
    pub fn get(&self, node: NodeId) -> Vec<T> {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.lens[node.0]],
        }
    }

    pub fn get_ref(&self, node: NodeId) -> Option<&[T]> {
        self.grads[node.0].as_deref()
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bindings: IndexMap<String, NodeId>,
}

/// `C += A·B` for an `m×k` by `k×n` product; strides are `[row, col]`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: [usize; 2],
    b: &[T],
    sb: [usize; 2],
    c: &mut [T],
    sc: [usize; 2],
) {
    let last = |r: usize, cc: usize, s: [usize; 2]| if r == 0 || cc == 0 { 0 } else { (r - 1) * s[0] + (cc - 1) * s[1] + 1 };
    assert!(a.len() >= last(m, k, sa) && b.len() >= last(k, n, sb) && c.len() >= last(m, n, sc));
    if m == 0 || n == 0 {
        return;
    }
    let st = |s: [usize; 2]| (s[0] as isize, s[1] as isize);
    let ((ra, ca), (rb, cb), (rc, ccs)) = (st(sa), st(sb), st(sc));
    let id = TypeId::of::<T>();
    // SAFETY: the element type is checked to be exactly f32 / f64, and the
    // bounds assertion above covers every index the kernel touches.
    unsafe {
        if id == TypeId::of::<f32>() {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr() as *const f32, ra, ca, b.as_ptr() as *const f32, rb, cb, 1.0,
                c.as_mut_ptr() as *mut f32, rc, ccs,
            );
            return;
        }
        if id == TypeId::of::<f64>() {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr() as *const f64, ra, ca, b.as_ptr() as *const f64, rb, cb, 1.0,
                c.as_mut_ptr() as *mut f64, rc, ccs,
            );
            return;
        }
    }
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * sa[0] + kk * sa[1]];
            for j in 0..n {
                c[i * sc[0] + j * sc[1]] += aik * b[kk * sb[0] + j * sb[1]];
            }
        }
    }
}

fn same_len<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a named parameter. Binding the same name twice returns the
    /// original node so shared weights accumulate into one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.bindings.get(name) {
            return id;
        }
        let mut v = t.clone();
        v.grad = None;
        let id = self.push(v, Op::Leaf, t.requires_grad);
        self.bindings.insert(name.to_string(), id);
        id
    }

    pub fn binding(&self, name: &str) -> Option<NodeId> {
        self.bindings.get(name).copied()
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Copy of `id`'s value as a new constant, cutting the gradient path.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.input(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k) = (av.rows(), av.cols());
        let (k2, m) = (bv.rows(), bv.cols());
        if k != k2 {
            return Err(dim_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![T::zero(); n * m];
        gemm(n, k, m, av.data(), [k, 1], bv.data(), [m, 1], &mut out, [m, 1]);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), ng))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `a[n, m] + bias[m]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let m = av.cols();
        if bv.len() != m {
            return Err(dim_err(
                "add_row",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let b = bv.data();
        let data = av
            .data()
            .chunks(m.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(&[a, bias]);
        Ok(self.push(t, Op::AddRow(a, bias), ng))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let ng = self.nodes[a.0].needs_grad;
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    /// Clamp with zero subgradient outside `[lo, hi]` and at the boundaries.
    pub fn clamp(&mut self, a: NodeId, lo: Option<T>, hi: Option<T>) -> NodeId {
        self.unary(
            a,
            |x| {
                let x = lo.map_or(x, |l| x.max(l));
                hi.map_or(x, |h| x.min(h))
            },
            Op::Clamp(a, lo, hi),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.data();
        let s: T = v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let ng = self.nodes[a.0].needs_grad;
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len("mse", av, bv)?;
        let n = T::of(av.len().max(1) as f64);
        let s: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), ng))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(dim_err(
                    "concat_cols",
                    format!("row count {} vs {}", v.rows(), rows),
                ));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if start > end || end > av.cols() {
            return Err(dim_err(
                "slice_cols",
                format!("{}..{} of {:?}", start, end, av.shape()),
            ));
        }
        let rows = av.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(
            Tensor::new(vec![rows, end - start], data)?,
            Op::SliceCols(a, start, end),
            ng,
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        if start > end || end > av.rows() {
            return Err(dim_err(
                "slice_rows",
                format!("{}..{} of {:?}", start, end, av.shape()),
            ));
        }
        let c = av.cols();
        let data = av.data()[start * c..end * c].to_vec();
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(
            Tensor::new(vec![end - start, c], data)?,
            Op::SliceRows(a, start),
            ng,
        ))
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, index: Vec<usize>) -> Result<NodeId> {
        let av = &self.nodes[a.0].value;
        let (rows, c) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            if i >= rows {
                return Err(dim_err(
                    "gather_rows",
                    format!("row {} of {}", i, rows),
                ));
            }
            data.extend_from_slice(av.row(i));
        }
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(
            Tensor::new(vec![index.len(), c], data)?,
            Op::GatherRows(a, index),
            ng,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.nodes[a.0].value.clone().reshape(shape)?;
        let ng = self.nodes[a.0].needs_grad;
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Register an op whose forward was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        value: Tensor<T>,
        backward: CustomBackward<T>,
    ) -> NodeId {
        let ng = self.ng(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), backward), ng)
    }

    /// Reverse pass from a single-element loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![T::zero(); self.nodes[id.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let (ad, bd) = (av.data(), bv.data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(*a, &mut |ga| gemm(n, m, k, g, [m, 1], bd, [1, m], ga, [k, 1]));
                acc(*b, &mut |gb| gemm(k, n, m, ad, [1, k], g, [m, 1], gb, [m, 1]));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let m = val(*b).len();
                acc(*b, &mut |gb| {
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / bd[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] -= g[i] * ad[i] / (bd[i] * bd[i]);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * *c;
                }
            }),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (T::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i];
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (T::one() - y[i]);
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            ga[i] += g[i];
                        } else if x[i] < T::zero() {
                            ga[i] -= g[i];
                        }
                    }
                });
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Mean(a) => {
                let n = T::of(val(*a).len().max(1) as f64);
                acc(*a, &mut |ga| {
                    for o in ga.iter_mut() {
                        *o += g[0] / n;
                    }
                });
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let c = T::of(2.0) * g[0] / T::of(ad.len().max(1) as f64);
                acc(*a, &mut |ga| {
                    for i in 0..ad.len() {
                        ga[i] += c * (ad[i] - bd[i]);
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..ad.len() {
                        gb[i] -= c * (ad[i] - bd[i]);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        let inside = lo.map_or(true, |l| x[i] > l) && hi.map_or(true, |h| x[i] < h);
                        if inside {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let cols = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    acc(*p, &mut |gp| {
                        for r in 0..rows {
                            add_into(&mut gp[r * c..(r + 1) * c], &g[r * cols + off..r * cols + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols(a, start, end) => {
                let cols = val(*a).cols();
                let w = end - start;
                acc(*a, &mut |ga| {
                    for (r, grow) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut ga[r * cols + start..r * cols + end], grow);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = val(*a).cols();
                acc(*a, &mut |ga| add_into(&mut ga[start * c..start * c + g.len()], g));
            }
            Op::GatherRows(a, index) => {
                let c = val(*a).cols();
                acc(*a, &mut |ga| {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut ga[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Custom(inputs, backward) => {
                let gs = backward(g);
                for (id, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        acc(*id, &mut |ga| add_into(ga, &gi));
                    }
                }
            }
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

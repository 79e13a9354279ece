//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every primitive records its inputs on the [`Tape`]. Backward rules are
//! themselves written with tape primitives, so [`Tape::gradients`] can
//! return gradients as new graph nodes that can be differentiated again.
//! That second-order path is what the gradient-penalty losses need.
//! [`Tape::backward`] is the ordinary first-order entry point: it computes
//! gradients for every leaf that requires them and then discards the
//! backward nodes.

mod check;
pub mod kernels;
mod vjp;

use std::collections::HashMap;
use std::sync::Arc;

pub use check::{grad_check, grad_check_with, GradCheckReport};
pub use kernels::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::{numel, Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Gather { x: Var, index: Arc<Vec<usize>> },
    ScatterAdd { x: Var, index: Arc<Vec<usize>> },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Embed { x: Var, axis: usize, start: usize },
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvInputGrad { gy: Var, w: Var, geom: ConvGeom },
    ConvWeightGrad { x: Var, gy: Var, geom: ConvGeom },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Clamp { .. } => "clamp",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::SumTo(..) => "sum_to",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Embed { .. } => "embed",
            Op::Conv { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv2d_input_grad",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sqrt(x)
            | Op::Square(x)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::BroadcastTo(x)
            | Op::SumTo(x) => vec![*x],
            Op::Clamp { x, .. }
            | Op::Gather { x, .. }
            | Op::ScatterAdd { x, .. }
            | Op::Narrow { x, .. }
            | Op::Embed { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Conv { x, w, .. } => vec![*x, *w],
            Op::ConvInputGrad { gy, w, .. } => vec![*gy, *w],
            Op::ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Single-owner record of the operations of one forward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// First-order gradients of one backward pass, keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients<T: Real = f32> {
    by_leaf: HashMap<Var, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.by_leaf.get(&v).map(|g| g.as_slice())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.by_leaf.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it takes part in differentiation iff
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        let value = Tensor::from_parts(tensor.shape().to_vec(), tensor.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let mut t = tensor;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn variable(&mut self, tensor: Tensor<T>) -> Var {
        let mut t = tensor;
        t.requires_grad = true;
        self.leaf(t)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(T::of_f64(x)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, data) = kernels::binary(name, ta.data(), ta.shape(), tb.data(), tb.shape(), f)?;
        Ok(self.push(shape, data, op))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::of_f64(s);
        self.unary(x, move |v| v * k, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let k = T::of_f64(s);
        self.unary(x, move |v| v + k, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    /// Natural logarithm; every element must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.data(x).iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "log", phase: "forward" });
        }
        if let Some(bad) = self.data(x).iter().find(|v| !(**v > T::zero())) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {:?}", bad),
            });
        }
        Ok(self.unary(x, |v| v.ln(), Op::Log(x)))
    }

    /// Square root; negative elements are rejected.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.data(x).iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "sqrt", phase: "forward" });
        }
        if let Some(bad) = self.data(x).iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {:?}", bad),
            });
        }
        Ok(self.unary(x, |v| v.sqrt(), Op::Sqrt(x)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of_f64(lo), T::of_f64(hi));
        self.unary(x, move |v| v.max(l).min(h), Op::Clamp { x, lo, hi })
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        self.clamp(x, lo, f64::INFINITY)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of_f64(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let data = kernels::matmul(self.data(a), self.data(b), sa[0], sa[1], sb[1]);
        Ok(self.push(vec![sa[0], sb[1]], data, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                detail: format!("expected rank 2, got {s:?}"),
            });
        }
        let data = kernels::transpose2d(self.data(x), s[0], s[1]);
        Ok(self.push(vec![s[1], s[0]], data, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.data(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = kernels::broadcast_to(self.data(x), self.shape(x), shape)?;
        Ok(self.push(shape.to_vec(), data, Op::BroadcastTo(x)))
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = kernels::sum_to(self.data(x), self.shape(x), shape)?;
        Ok(self.push(shape.to_vec(), data, Op::SumTo(x)))
    }

    /// `out[j] = x[index[j]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if numel(shape) != index.len() || index.iter().any(|&i| i >= n) {
            return Err(Error::InvalidShape {
                op: "gather",
                detail: format!("index of {} entries into {} elements for shape {shape:?}", index.len(), n),
            });
        }
        let data = kernels::gather(self.data(x), &index);
        Ok(self.push(shape.to_vec(), data, Op::Gather { x, index }))
    }

    /// `out[index[j]] += x[j]` into a zero tensor of `shape`.
    pub fn scatter_add(&mut self, x: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let n = numel(shape);
        if self.value(x).len() != index.len() || index.iter().any(|&i| i >= n) {
            return Err(Error::InvalidShape {
                op: "scatter_add",
                detail: format!("{} values, {} indices into shape {shape:?}", self.value(x).len(), index.len()),
            });
        }
        let data = kernels::scatter_add(self.data(x), &index, n);
        Ok(self.push(shape.to_vec(), data, Op::ScatterAdd { x, index }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!("concat axis {axis} out of range for {first:?}")));
        }
        for p in &parts[1..] {
            let s = self.shape(*p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
        }
        let views: Vec<(&[T], &[usize])> = parts.iter().map(|p| (self.data(*p), self.shape(*p))).collect();
        let (shape, data) = kernels::concat(&views, axis);
        Ok(self.push(
            shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "narrow [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let data = kernels::narrow(self.data(x), &s, axis, start, len);
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(shape, data, Op::Narrow { x, axis, start }))
    }

    pub fn embed(&mut self, x: Var, axis: usize, start: usize, full: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + s[axis] > full {
            return Err(Error::InvalidArgument(format!("embed at {start} into {full} on axis {axis} of {s:?}")));
        }
        let data = kernels::embed(self.data(x), &s, axis, start, full);
        let mut shape = s;
        shape[axis] = full;
        Ok(self.push(shape, data, Op::Embed { x, axis, start }))
    }

    fn check_conv(&self, geom: &ConvGeom, x: Var, x_expect: [usize; 4], w: Var) -> Result<usize> {
        let xs = self.shape(x);
        if xs.len() != 4 || xs[1..] != x_expect[1..] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: x_expect.to_vec(),
            });
        }
        if self.shape(w) != geom.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight",
                lhs: self.shape(w).to_vec(),
                rhs: geom.weight_shape().to_vec(),
            });
        }
        Ok(xs[0])
    }

    /// Cross-correlation `x: [B, in_c, in_h, in_w]`, `w: [out_c, in_c, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let batch = self.check_conv(&geom, x, geom.input_shape(0), w)?;
        let data = kernels::conv2d(&geom, self.data(x), self.data(w), batch);
        Ok(self.push(geom.output_shape(batch).to_vec(), data, Op::Conv { x, w, geom }))
    }

    /// Adjoint of [`Tape::conv2d`] in its input: maps `[B, out_c, out_h, out_w]`
    /// back to `[B, in_c, in_h, in_w]`. This is the transposed convolution.
    pub fn conv2d_input_grad(&mut self, gy: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let batch = self.check_conv(&geom, gy, geom.output_shape(0), w)?;
        let data = kernels::conv2d_input_grad(&geom, self.data(gy), self.data(w), batch);
        Ok(self.push(geom.input_shape(batch).to_vec(), data, Op::ConvInputGrad { gy, w, geom }))
    }

    /// Adjoint of [`Tape::conv2d`] in its weight.
    pub fn conv2d_weight_grad(&mut self, x: Var, gy: Var, geom: ConvGeom) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(gy).to_vec();
        let batch = xs.first().copied().unwrap_or(0);
        if xs.len() != 4
            || xs[1..] != geom.input_shape(0)[1..]
            || gs != geom.output_shape(batch)
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d_weight_grad",
                lhs: xs,
                rhs: gs,
            });
        }
        let data = kernels::conv2d_weight_grad(&geom, self.data(x), self.data(gy), batch);
        Ok(self.push(geom.weight_shape().to_vec(), data, Op::ConvWeightGrad { x, gy, geom }))
    }

    // ---- reductions built from the primitives above ----

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.sum_to(x, &[1])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = self.sum(x)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    fn keepdim_shape(&self, x: Var, axes: &[usize]) -> Result<Vec<usize>> {
        let s = self.shape(x);
        if axes.iter().any(|&a| a >= s.len()) {
            return Err(Error::InvalidArgument(format!("axes {axes:?} out of range for {s:?}")));
        }
        if s.is_empty() || self.value(x).is_empty() {
            return Err(Error::InvalidArgument("reduction of an empty tensor".into()));
        }
        Ok(s.iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect())
    }

    /// Sum over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let target = self.keepdim_shape(x, axes)?;
        self.sum_to(x, &target)
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let target = self.keepdim_shape(x, axes)?;
        let count = self.value(x).len() / numel(&target);
        let s = self.sum_to(x, &target)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    /// Max over `axes` (kept as extent 1). Gradient flows to the first
    /// maximal element in row-major order.
    pub fn max_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let target = self.keepdim_shape(x, axes)?;
        let shape = self.shape(x).to_vec();
        let data = self.data(x);
        let out_n = numel(&target);
        let mut best: Vec<Option<usize>> = vec![None; out_n];
        let out_strides = {
            let mut st = vec![0; target.len()];
            let mut acc = 1;
            for i in (0..target.len()).rev() {
                st[i] = if target[i] == 1 { 0 } else { acc };
                acc *= target[i];
            }
            st
        };
        let mut idx = vec![0usize; shape.len()];
        for (flat, &v) in data.iter().enumerate() {
            let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            match best[o] {
                Some(b) if data[b] >= v => {}
                _ => best[o] = Some(flat),
            }
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let index: Vec<usize> = best.into_iter().map(|b| b.expect("nonempty reduction")).collect();
        self.gather(x, Arc::new(index), &target)
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let m = self.max_axes(x, &axes)?;
        self.reshape(m, &[1])
    }

    // ---- differentiation ----

    /// Gradients of the scalar `loss` with respect to `wrt`, recorded as new
    /// tape nodes so they can be differentiated again. Entries are `None`
    /// when `loss` does not depend on the variable.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Var>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].needs_grad {
            return Ok(vec![None; wrt.len()]);
        }
        let wanted: std::collections::HashSet<usize> = wrt.iter().map(|v| v.0).collect();
        let seed_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(self.constant(Tensor::full(seed_shape, T::one())));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let contributions = self.vjp(Var(i), &op, g)?;
            for (input, gi) in contributions {
                if !self.nodes[gi.0].value.all_finite() {
                    return Err(Error::NonFinite {
                        op: op.name(),
                        phase: "backward",
                    });
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, gi)?,
                    None => gi,
                });
            }
            // intermediate gradients are no longer needed once propagated
            if !wanted.contains(&i) {
                grads[i] = None;
            }
        }
        Ok(wrt.iter().map(|v| grads.get(v.0).copied().flatten()).collect())
    }

    /// First-order backward pass: returns the gradient of `loss` for every
    /// leaf that requires one. Backward nodes are discarded afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let start = self.nodes.len();
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].needs_grad)
            .map(Var)
            .collect();
        let result = self.gradients(loss, &leaves);
        let out = result.map(|grads| {
            let mut by_leaf = HashMap::new();
            for (leaf, g) in leaves.iter().zip(grads) {
                if let Some(g) = g {
                    by_leaf.insert(*leaf, self.nodes[g.0].value.data().to_vec());
                }
            }
            Gradients { by_leaf }
        });
        self.nodes.truncate(start);
        out
    }
}

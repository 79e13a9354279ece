//! Backward rules, expressed with tape primitives so they are themselves
//! differentiable.

use super::{Op, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// `g * mask` where the mask is a constant derived from `x`'s value.
    fn masked(&mut self, g: Var, x: Var, f: impl Fn(T) -> T) -> Result<Var> {
        let t = self.value(x);
        let mask: Vec<T> = t.data().iter().map(|&v| f(v)).collect();
        let m = self.constant(Tensor::from_parts(t.shape().to_vec(), mask));
        self.mul(g, m)
    }

    /// Reduces a broadcast gradient back to the operand's shape.
    fn unbroadcast(&mut self, g: Var, like: Var) -> Result<Var> {
        if self.shape(g) == self.shape(like) {
            Ok(g)
        } else {
            let s = self.shape(like).to_vec();
            self.sum_to(g, &s)
        }
    }

    pub(super) fn vjp(&mut self, out: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(a) {
                    res.push((a, self.unbroadcast(g, a)?));
                }
                if self.wants(b) {
                    res.push((b, self.unbroadcast(g, b)?));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    res.push((a, self.unbroadcast(g, a)?));
                }
                if self.wants(b) {
                    let n = self.neg(g);
                    res.push((b, self.unbroadcast(n, b)?));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let t = self.mul(g, b)?;
                    res.push((a, self.unbroadcast(t, a)?));
                }
                if self.wants(b) {
                    let t = self.mul(g, a)?;
                    res.push((b, self.unbroadcast(t, b)?));
                }
            }
            Op::Div(a, b) => {
                if self.wants(a) {
                    let t = self.div(g, b)?;
                    res.push((a, self.unbroadcast(t, a)?));
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = self.mul(g, out)?;
                    let t = self.div(t, b)?;
                    let t = self.neg(t);
                    res.push((b, self.unbroadcast(t, b)?));
                }
            }
            Op::Neg(x) => res.push((x, self.neg(g))),
            Op::Scale(x, s) => res.push((x, self.scale(g, s))),
            Op::AddScalar(x) => res.push((x, g)),
            Op::Exp(x) => res.push((x, self.mul(g, out)?)),
            Op::Log(x) => res.push((x, self.div(g, x)?)),
            Op::Sqrt(x) => {
                let two_y = self.scale(out, 2.0);
                res.push((x, self.div(g, two_y)?));
            }
            Op::Square(x) => {
                let two_x = self.scale(x, 2.0);
                res.push((x, self.mul(g, two_x)?));
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (T::of_f64(lo), T::of_f64(hi));
                let gx = self.masked(g, x, |v| if v >= l && v <= h { T::one() } else { T::zero() })?;
                res.push((x, gx));
            }
            Op::Relu(x) => {
                let gx = self.masked(g, x, |v| if v > T::zero() { T::one() } else { T::zero() })?;
                res.push((x, gx));
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::of_f64(slope);
                let gx = self.masked(g, x, |v| if v > T::zero() { T::one() } else { s })?;
                res.push((x, gx));
            }
            Op::Sigmoid(x) => {
                // y (1 - y)
                let one_minus = self.neg(out);
                let one_minus = self.add_scalar(one_minus, 1.0);
                let d = self.mul(out, one_minus)?;
                res.push((x, self.mul(g, d)?));
            }
            Op::Tanh(x) => {
                // 1 - y^2
                let y2 = self.square(out);
                let d = self.neg(y2);
                let d = self.add_scalar(d, 1.0);
                res.push((x, self.mul(g, d)?));
            }
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if self.wants(b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(x) => res.push((x, self.transpose(g)?)),
            Op::Reshape(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.reshape(g, &s)?));
            }
            Op::BroadcastTo(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.sum_to(g, &s)?));
            }
            Op::SumTo(x) => {
                let s = self.shape(x).to_vec();
                res.push((x, self.broadcast_to(g, &s)?));
            }
            Op::Gather { x, ref index } => {
                let s = self.shape(x).to_vec();
                res.push((x, self.scatter_add(g, index.clone(), &s)?));
            }
            Op::ScatterAdd { x, ref index } => {
                let s = self.shape(x).to_vec();
                res.push((x, self.gather(g, index.clone(), &s)?));
            }
            Op::Concat { ref parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[axis];
                    if self.wants(p) {
                        res.push((p, self.narrow(g, axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let full = self.shape(x)[axis];
                res.push((x, self.embed(g, axis, start, full)?));
            }
            Op::Embed { x, axis, start } => {
                let len = self.shape(x)[axis];
                res.push((x, self.narrow(g, axis, start, len)?));
            }
            Op::Conv { x, w, geom } => {
                if self.wants(x) {
                    res.push((x, self.conv2d_input_grad(g, w, geom)?));
                }
                if self.wants(w) {
                    res.push((w, self.conv2d_weight_grad(x, g, geom)?));
                }
            }
            Op::ConvInputGrad { gy, w, geom } => {
                if self.wants(gy) {
                    res.push((gy, self.conv2d(g, w, geom)?));
                }
                if self.wants(w) {
                    res.push((w, self.conv2d_weight_grad(g, gy, geom)?));
                }
            }
            Op::ConvWeightGrad { x, gy, geom } => {
                if self.wants(x) {
                    res.push((x, self.conv2d_input_grad(gy, g, geom)?));
                }
                if self.wants(gy) {
                    res.push((gy, self.conv2d(x, g, geom)?));
                }
            }
        }
        Ok(res)
    }
}

//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation in execution order. Inputs always
//! precede the nodes that consume them, so the backward pass is a single
//! reverse sweep. Gradients arriving at a node from several consumers are
//! summed in reverse tape order, which keeps results bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::kernels::{self as k, Conv2dGeom, NormStats, NormView, PoolGeom, Reduce, Unary};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom },
    Pool2d { x: Var, geom: PoolGeom },
    Upsample { x: Var },
    Softmax { x: Var, axis: usize },
    Unary { x: Var, u: Unary },
    Binary { a: Var, b: Var, kind: Bin },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Expand { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Pad { x: Var },
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Reduce { x: Var, axis: usize, kind: Reduce },
    SumAll { x: Var },
    Normalize { x: Var, view: NormView, inv_std: Vec<T> },
    CrossEntropy { x: Var, grad: Tensor<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Pool2d { .. } => "pool2d",
            Op::Upsample { .. } => "upsample_bilinear",
            Op::Softmax { .. } => "softmax",
            Op::Unary { u, .. } => match u {
                Unary::Sigmoid => "sigmoid",
                Unary::Relu => "relu",
                Unary::Gelu => "gelu",
                Unary::Exp => "exp",
                Unary::LnClamped => "ln",
            },
            Op::Binary { kind, .. } => match kind {
                Bin::Add => "add",
                Bin::Sub => "sub",
                Bin::Mul => "mul",
                Bin::Div => "div",
            },
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Expand { .. } => "expand",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Pad { .. } => "pad",
            Op::Matmul { .. } => "batched_matmul",
            Op::Reduce { .. } => "reduce",
            Op::SumAll { .. } => "sum",
            Op::Normalize { .. } => "normalize",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Deliberate adjoint faults, used to check that the gradient checker and
/// the backward error paths actually fire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointFault {
    /// Treat the named op as having no registered adjoint.
    Missing(&'static str),
    /// Scale every input gradient produced by the named op by 1.5.
    Corrupt(&'static str),
}

/// The tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<AdjointFault>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> std::fmt::Debug for Grads<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.grads.iter().filter(|g| g.is_some()).count();
        write!(f, "Grads({n} populated)")
    }
}

impl<T: Element> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), fault: None }
    }

    pub fn with_fault(fault: AdjointFault) -> Self {
        Graph { nodes: Vec::new(), fault: Some(fault) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value that gradients flow into.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom) -> Result<Var> {
        let y = k::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.rg(&ins);
        Ok(self.push(y, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn pool2d(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        let y = k::pool2d_forward(self.value(x), &geom)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Pool2d { x, geom }, rg))
    }

    pub fn upsample_bilinear(&mut self, x: Var, out: (usize, usize)) -> Result<Var> {
        let y = k::upsample_bilinear_forward(self.value(x), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Upsample { x }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = k::softmax(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Softmax { x, axis }, rg))
    }

    pub fn unary(&mut self, x: Var, u: Unary) -> Var {
        let y = k::unary(u, self.value(x));
        let rg = self.rg(&[x]);
        self.push(y, Op::Unary { x, u }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Bin) -> Result<Var> {
        let (name, f): (&'static str, fn(T, T) -> T) = match kind {
            Bin::Add => ("add", |x, y| x + y),
            Bin::Sub => ("sub", |x, y| x - y),
            Bin::Mul => ("mul", |x, y| x * y),
            Bin::Div => ("div", |x, y| x / y),
        };
        let y = k::binary(name, self.value(a), self.value(b), f)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Binary { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Div)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(y, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(y, Op::AddScalar { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let y = k::permute(self.value(x), perm)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = k::expand(self.value(x), shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Expand { x }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = k::concat(&vals, axis)?;
        let rg = self.rg(xs);
        Ok(self.push(y, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let y = k::narrow(self.value(x), axis, start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Narrow { x, axis, start }, rg))
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let extent = self.shape(x).get(axis).copied().unwrap_or(0);
        if total != extent {
            return Err(Error::shape("split", format!("sizes {sizes:?} sum to {total}, axis {axis} has extent {extent}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Zero-pad the last two axes at the bottom and right.
    pub fn pad_bottom_right(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let y = k::pad_bottom_right(self.value(x), bottom, right)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Pad { x }, rg))
    }

    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched product of optionally transposed operands.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let y = k::batched_matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(y, Op::Matmul { a, b, ta, tb }, rg))
    }

    /// Reduce along `axis`, keeping it with extent 1.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: Reduce) -> Result<Var> {
        let y = k::reduce_axis(self.value(x), axis, kind)?;
        let rg = self.rg(&[x]);
        Ok(self.push(y, Op::Reduce { x, axis, kind }, rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(y, Op::SumAll { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Standardize `x` viewed as `[a, m, i]` with one mean and variance per `m`.
    pub fn normalize(&mut self, x: Var, view: NormView, eps: f64) -> Result<(Var, NormStats<T>)> {
        let (y, stats) = k::normalize(self.value(x), view, eps)?;
        let rg = self.rg(&[x]);
        let v = self.push(y, Op::Normalize { x, view, inv_std: stats.inv_std.clone() }, rg);
        Ok((v, stats))
    }

    /// Mean cross-entropy over non-ignored pixels of `[B, K, ...]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u32], ignore: u32) -> Result<Var> {
        let (loss, grad) = k::cross_entropy(self.value(logits), labels, ignore)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { x: logits, grad }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let name = node.op.name();
            if self.fault == Some(AdjointFault::Missing(name)) {
                return Err(Error::MissingAdjoint(name));
            }
            let mut contribs = self.adjoint(node, &g)?;
            if self.fault == Some(AdjointFault::Corrupt(name)) {
                for (_, c) in &mut contribs {
                    *c = c.map(|v| v * T::of(1.5));
                }
            }
            for (v, c) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(c.data()).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(Grads { grads })
    }

    fn adjoint(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let gr = k::conv2d_backward(val(*x), val(*w), g, *geom)?;
                out.push((*x, gr.dx));
                out.push((*w, gr.dw));
                if let Some(b) = b {
                    out.push((*b, gr.db));
                }
            }
            Op::Pool2d { x, geom } => out.push((*x, k::pool2d_backward(val(*x), g, geom)?)),
            Op::Upsample { x } => out.push((*x, k::upsample_bilinear_backward(val(*x).shape(), g)?)),
            Op::Softmax { x, axis } => {
                out.push((*x, k::reduce::softmax_backward(&node.value, g, *axis)));
            }
            Op::Unary { x, u } => {
                let xv = val(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * k::elementwise::unary_derivative(*u, xi, yi))
                    .collect();
                out.push((*x, Tensor::from_parts(xv.shape().to_vec(), d)));
            }
            Op::Binary { a, b, kind } => {
                let (av, bv) = (val(*a), val(*b));
                let (sa, sb) = (av.shape(), bv.shape());
                match kind {
                    Bin::Add => {
                        out.push((*a, k::reduce_to(g, sa)));
                        out.push((*b, k::reduce_to(g, sb)));
                    }
                    Bin::Sub => {
                        out.push((*a, k::reduce_to(g, sa)));
                        out.push((*b, k::reduce_to(&g.map(|v| -v), sb)));
                    }
                    Bin::Mul => {
                        if want(*a) {
                            out.push((*a, k::reduce_to(&k::binary("mul", g, bv, |p, q| p * q)?, sa)));
                        }
                        if want(*b) {
                            out.push((*b, k::reduce_to(&k::binary("mul", g, av, |p, q| p * q)?, sb)));
                        }
                    }
                    Bin::Div => {
                        if want(*a) {
                            out.push((*a, k::reduce_to(&k::binary("div", g, bv, |p, q| p / q)?, sa)));
                        }
                        if want(*b) {
                            // d(a/b)/db = -(a/b) / b = -y / b
                            let gy = k::binary("mul", g, &node.value, |p, q| p * q)?;
                            let t = k::binary("div", &gy, bv, |p, q| -(p / q))?;
                            out.push((*b, k::reduce_to(&t, sb)));
                        }
                    }
                }
            }
            Op::Scale { x, c } => out.push((*x, g.map(|v| v * *c))),
            Op::AddScalar { x } => out.push((*x, g.clone())),
            Op::Reshape { x } => out.push((*x, g.reshape(val(*x).shape())?)),
            Op::Permute { x, perm } => out.push((*x, k::permute(g, &k::inverse_perm(perm))?)),
            Op::Expand { x } => out.push((*x, k::reduce_to(g, val(*x).shape()))),
            Op::Concat { xs, axis } => {
                let mut start = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    if want(x) {
                        out.push((x, k::narrow(g, *axis, start, len)?));
                    }
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                out.push((*x, k::layout::narrow_backward(g, val(*x).shape(), *axis, *start)));
            }
            Op::Pad { x } => {
                let s = val(*x).shape();
                let r = s.len();
                let rows = k::narrow(g, r - 2, 0, s[r - 2])?;
                out.push((*x, k::narrow(&rows, r - 1, 0, s[r - 1])?));
            }
            Op::Matmul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                let (da, db) = match (ta, tb) {
                    (false, false) => (k::batched_matmul(g, bv, false, true)?, k::batched_matmul(av, g, true, false)?),
                    (false, true) => (k::batched_matmul(g, bv, false, false)?, k::batched_matmul(g, av, true, false)?),
                    (true, false) => (k::batched_matmul(bv, g, false, true)?, k::batched_matmul(av, g, false, false)?),
                    (true, true) => (k::batched_matmul(bv, g, true, true)?, k::batched_matmul(g, av, true, true)?),
                };
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Reduce { x, axis, kind } => {
                out.push((*x, k::reduce::reduce_axis_backward(val(*x), g, *axis, *kind)));
            }
            Op::SumAll { x } => out.push((*x, Tensor::full(val(*x).shape(), g.item()))),
            Op::Normalize { x, view, inv_std } => {
                out.push((*x, k::reduce::normalize_backward(&node.value, inv_std, g, *view)));
            }
            Op::CrossEntropy { x, grad } => {
                let s = g.item();
                out.push((*x, grad.map(|v| v * s)));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn half_sum_of_squares_gradient_is_x() {
        let mut g = Graph::<f64>::new();
        let x0 = Tensor::from_fn(&[4], |i| i as f64 - 1.5);
        let x = g.param(x0.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), x0.data());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn missing_adjoint_names_the_op() {
        let mut g = Graph::<f64>::with_fault(AdjointFault::Missing("sigmoid"));
        let x = g.param(Tensor::zeros(&[3]));
        let y = g.sigmoid(x);
        let s = g.sum(y);
        let err = g.backward(s).unwrap_err();
        assert!(err.to_string().contains("sigmoid"), "{err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[2]));
        let c = g.constant(Tensor::full(&[2], 3.0));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn fan_in_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[1], 2.0));
        let a = g.scale(x, 3.0);
        let b = g.add(a, x).unwrap();
        let c = g.mul(b, x).unwrap(); // (3x + x) * x = 4x^2
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 16.0);
    }
}

//! Element-wise maps and binary arithmetic with singleton-only broadcasting.
//!
//! Operands of a binary op must have the same rank; along each axis the
//! extents must match or one of them must be 1.

use crate::error::{Error, Result};
use crate::tensor::{strides, Element, Tensor, MAX_RANK};

/// Left-pads `shape` with ones to `MAX_RANK` axes.
pub(crate) fn pad_shape(shape: &[usize]) -> [usize; MAX_RANK] {
    let mut out = [1; MAX_RANK];
    out[MAX_RANK - shape.len()..].copy_from_slice(shape);
    out
}

/// Strides of `shape` padded to `MAX_RANK`, with zero stride on every axis
/// that `shape` broadcasts (extent 1 where `target` is larger).
pub(crate) fn broadcast_strides(shape: &[usize], target: &[usize]) -> [usize; MAX_RANK] {
    let s = strides(shape);
    let mut out = [0; MAX_RANK];
    let off = MAX_RANK - shape.len();
    for (i, (&d, &t)) in shape.iter().zip(target).enumerate() {
        out[off + i] = if d == 1 && t != 1 { 0 } else { s[i] };
    }
    out
}

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch: {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, format!("axis {axis}: {x} vs {y} in {a:?} and {b:?}"))),
        })
        .collect()
}

/// Calls `f(out_index, offset)` for every position of `shape` in row-major
/// order, where `offset` follows the given (possibly zero) strides.
pub(crate) fn walk(shape: &[usize], st: &[usize; MAX_RANK], mut f: impl FnMut(usize, usize)) {
    let d = pad_shape(shape);
    let mut n = 0;
    for i0 in 0..d[0] {
        let o0 = i0 * st[0];
        for i1 in 0..d[1] {
            let o1 = o0 + i1 * st[1];
            for i2 in 0..d[2] {
                let o2 = o1 + i2 * st[2];
                for i3 in 0..d[3] {
                    let o3 = o2 + i3 * st[3];
                    for i4 in 0..d[4] {
                        f(n, o3 + i4 * st[4]);
                        n += 1;
                    }
                }
            }
        }
    }
}

pub fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let mut ia = Vec::with_capacity(n);
    walk(&shape, &sa, |_, o| ia.push(o));
    let mut data = Vec::with_capacity(n);
    walk(&shape, &sb, |i, o| data.push(f(a.data()[ia[i]], b.data()[o])));
    Ok(Tensor::from_parts(shape, data))
}

/// Sums `g` down to `shape`, undoing a singleton broadcast.
pub fn reduce_to<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let st = broadcast_strides(shape, g.shape());
    let mut out = vec![T::zero(); shape.iter().product()];
    walk(g.shape(), &st, |i, o| out[o] += g.data()[i]);
    Tensor::from_parts(shape.to_vec(), out)
}

/// Broadcasts `x` to `shape` by repeating singleton axes.
pub fn expand<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let target = broadcast_shape("expand", x.shape(), shape)?;
    if target != shape {
        return Err(Error::shape("expand", format!("{:?} cannot be expanded to {shape:?}", x.shape())));
    }
    let st = broadcast_strides(x.shape(), shape);
    let mut data = Vec::with_capacity(shape.iter().product());
    walk(shape, &st, |_, o| data.push(x.data()[o]));
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unary {
    Sigmoid,
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Exp,
    /// Natural log of `max(x, floor)`; zero gradient where the floor is active.
    LnClamped,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LN_FLOOR: f64 = 1e-12;

pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn unary_scalar<T: Element>(u: Unary, x: T) -> T {
    match u {
        Unary::Sigmoid => sigmoid(x),
        Unary::Relu => x.max(T::zero()),
        Unary::Gelu => {
            let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
            T::of(0.5) * x * (T::one() + inner.tanh())
        }
        Unary::Exp => x.exp(),
        Unary::LnClamped => x.max(T::of(LN_FLOOR)).ln(),
    }
}

/// d unary(x) / dx, given the input `x` and forward output `y`.
pub fn unary_derivative<T: Element>(u: Unary, x: T, y: T) -> T {
    match u {
        Unary::Sigmoid => y * (T::one() - y),
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Gelu => {
            let c = T::of(GELU_C);
            let a = T::of(GELU_A);
            let t = (c * (x + a * x * x * x)).tanh();
            let half = T::of(0.5);
            half * (T::one() + t)
                + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
        }
        Unary::Exp => y,
        Unary::LnClamped => {
            if x > T::of(LN_FLOOR) {
                T::one() / x
            } else {
                T::zero()
            }
        }
    }
}

pub fn unary<T: Element>(u: Unary, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| unary_scalar(u, v))
}

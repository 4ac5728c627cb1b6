use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product()))
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum. The
/// normalizer is accumulated in f64 so f32 slices still sum to one within
/// a few ulps.
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split("softmax", x.shape(), axis)?;
    let mut y = vec![T::zero(); x.numel()];
    let xd = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let m = (0..n).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
            let mut s = 0.0f64;
            for j in 0..n {
                let e = (xd[at(j)] - m).exp();
                y[at(j)] = e;
                s += e.as_f64();
            }
            for j in 0..n {
                y[at(j)] = T::of(y[at(j)].as_f64() / s);
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), y))
}

/// dx = y * (dy - sum(dy * y)) along the softmax axis.
pub fn softmax_backward<T: Element>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split("softmax", y.shape(), axis).expect("validated in forward");
    let mut dx = vec![T::zero(); y.numel()];
    let (yd, gd) = (y.data(), dy.data());
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot = (0..n).fold(T::zero(), |a, j| a + gd[at(j)] * yd[at(j)]);
            for j in 0..n {
                dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Reduce along `axis`, keeping it with extent 1.
pub fn reduce_axis<T: Element>(x: &Tensor<T>, axis: usize, kind: Reduce) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split("reduce", x.shape(), axis)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    let inv = T::one() / T::of(n as f64);
    for o in 0..outer {
        for i in 0..inner {
            let it = (0..n).map(|j| xd[(o * n + j) * inner + i]);
            out.push(match kind {
                Reduce::Sum => it.fold(T::zero(), |a, v| a + v),
                Reduce::Mean => it.fold(T::zero(), |a, v| a + v) * inv,
                Reduce::Max => it.fold(T::neg_infinity(), T::max),
            });
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

/// Max routes the gradient to the first maximal entry along the axis.
pub fn reduce_axis_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>, axis: usize, kind: Reduce) -> Tensor<T> {
    let (outer, n, inner) = axis_split("reduce", x.shape(), axis).expect("validated in forward");
    let xd = x.data();
    let mut dx = vec![T::zero(); x.numel()];
    let inv = T::one() / T::of(n as f64);
    for o in 0..outer {
        for i in 0..inner {
            let g = dy.data()[o * inner + i];
            let at = |j: usize| (o * n + j) * inner + i;
            match kind {
                Reduce::Sum => (0..n).for_each(|j| dx[at(j)] = g),
                Reduce::Mean => (0..n).for_each(|j| dx[at(j)] = g * inv),
                Reduce::Max => {
                    let mut best = 0;
                    for j in 1..n {
                        if xd[at(j)] > xd[at(best)] {
                            best = j;
                        }
                    }
                    dx[at(best)] = g;
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

/// Normalization statistics for a tensor viewed as `[a, m, i]`: one mean and
/// variance per `m`, taken over the `a` and `i` axes. Batch norm over NCHW
/// uses `(B, C, H*W)`; group norm uses `(1, B*G, C/G*H*W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NormView {
    pub a: usize,
    pub m: usize,
    pub i: usize,
}

#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    /// Biased variance.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Number of values reduced into each statistic.
    pub count: usize,
}

pub fn normalize<T: Element>(x: &Tensor<T>, v: NormView, eps: f64) -> Result<(Tensor<T>, NormStats<T>)> {
    if v.a * v.m * v.i != x.numel() {
        return Err(Error::shape("normalize", format!("view {v:?} does not tile {:?}", x.shape())));
    }
    let xd = x.data();
    let count = T::of((v.a * v.i) as f64);
    let mut mean = vec![T::zero(); v.m];
    let mut var = vec![T::zero(); v.m];
    for a in 0..v.a {
        for (m, acc) in mean.iter_mut().enumerate() {
            let s = &xd[(a * v.m + m) * v.i..(a * v.m + m + 1) * v.i];
            *acc += s.iter().copied().fold(T::zero(), |p, q| p + q);
        }
    }
    mean.iter_mut().for_each(|s| *s = *s / count);
    for a in 0..v.a {
        for (m, acc) in var.iter_mut().enumerate() {
            let mu = mean[m];
            let s = &xd[(a * v.m + m) * v.i..(a * v.m + m + 1) * v.i];
            *acc += s.iter().fold(T::zero(), |p, &q| p + (q - mu) * (q - mu));
        }
    }
    var.iter_mut().for_each(|s| *s = *s / count);
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + T::of(eps)).sqrt()).collect();
    let mut y = Vec::with_capacity(x.numel());
    for a in 0..v.a {
        for m in 0..v.m {
            let s = &xd[(a * v.m + m) * v.i..(a * v.m + m + 1) * v.i];
            y.extend(s.iter().map(|&q| (q - mean[m]) * inv_std[m]));
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), y), NormStats { mean, var, inv_std, count: v.a * v.i }))
}

/// dx = inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat)).
pub fn normalize_backward<T: Element>(xhat: &Tensor<T>, inv_std: &[T], dy: &Tensor<T>, v: NormView) -> Tensor<T> {
    let (xd, gd) = (xhat.data(), dy.data());
    let mut sg = vec![T::zero(); v.m];
    let mut sgx = vec![T::zero(); v.m];
    for a in 0..v.a {
        for m in 0..v.m {
            let r = (a * v.m + m) * v.i..(a * v.m + m + 1) * v.i;
            for (&g, &xh) in gd[r.clone()].iter().zip(&xd[r]) {
                sg[m] += g;
                sgx[m] += g * xh;
            }
        }
    }
    let n = T::of((v.a * v.i) as f64);
    let mut dx = Vec::with_capacity(xhat.numel());
    for a in 0..v.a {
        for m in 0..v.m {
            let r = (a * v.m + m) * v.i..(a * v.m + m + 1) * v.i;
            let k = inv_std[m] / n;
            dx.extend(gd[r.clone()].iter().zip(&xd[r]).map(|(&g, &xh)| k * (n * g - sg[m] - xh * sgx[m])));
        }
    }
    Tensor::from_parts(xhat.shape().to_vec(), dx)
}

/// Index of the maximum along axis 1 of `[B, K, ...]`; first index wins ties.
pub fn argmax_channels<T: Element>(x: &Tensor<T>) -> Result<Vec<usize>> {
    if x.rank() < 2 {
        return Err(Error::shape("argmax", format!("need [B,K,...], got {:?}", x.shape())));
    }
    let (outer, k, inner) = axis_split("argmax", x.shape(), 1)?;
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| x.data()[(o * k + j) * inner + i];
            let mut best = 0;
            for j in 1..k {
                if at(j) > at(best) {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Floor applied to the true-class probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over non-ignored pixels of `-ln(max(p_true, 1e-12))`, with
/// `p = softmax(logits)` over axis 1. Returns the loss and the gradient
/// with respect to the logits.
pub fn cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[u32],
    ignore: u32,
) -> Result<(T, Tensor<T>)> {
    const OP: &str = "cross_entropy";
    if logits.rank() < 2 {
        return Err(Error::shape(OP, format!("logits must be [B,K,...], got {:?}", logits.shape())));
    }
    let (outer, k, inner) = axis_split(OP, logits.shape(), 1)?;
    if labels.len() != outer * inner {
        return Err(Error::shape(OP, format!("{} labels for logits {:?}", labels.len(), logits.shape())));
    }
    let p = softmax(logits, 1)?;
    let pd = p.data();
    let mut scored = 0usize;
    for &l in labels {
        if l == ignore {
            continue;
        }
        if l as usize >= k {
            return Err(Error::invalid(OP, format!("label {l} outside [0, {k}) and not the ignore id {ignore}")));
        }
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::invalid(OP, "every pixel carries the ignore label"));
    }
    let inv_n = T::one() / T::of(scored as f64);
    let floor = T::of(PROB_FLOOR);
    let mut loss = 0.0f64;
    let mut grad = vec![T::zero(); logits.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let l = labels[o * inner + i];
            if l == ignore {
                continue;
            }
            let pt = pd[(o * k + l as usize) * inner + i];
            loss -= pt.max(floor).as_f64().ln();
            if pt > floor {
                for j in 0..k {
                    let at = (o * k + j) * inner + i;
                    let onehot = if j == l as usize { T::one() } else { T::zero() };
                    grad[at] = (pd[at] - onehot) * inv_n;
                }
            }
        }
    }
    Ok((T::of(loss / scored as f64), Tensor::from_parts(logits.shape().to_vec(), grad)))
}

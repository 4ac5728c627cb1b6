use crate::error::{Error, Result};
use crate::tensor::{strides, Element, Tensor, MAX_RANK};

use super::elementwise::walk;

pub fn check_perm(rank: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != rank {
        return Err(Error::shape("permute", format!("axis order {perm:?} has length {} for rank {rank}", perm.len())));
    }
    let mut seen = [false; MAX_RANK];
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of 0..{rank}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    check_perm(x.rank(), perm)?;
    let s = strides(x.shape());
    let shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let mut st = [0; MAX_RANK];
    let off = MAX_RANK - perm.len();
    for (i, &p) in perm.iter().enumerate() {
        st[off + i] = s[p];
    }
    let mut data = Vec::with_capacity(x.numel());
    walk(&shape, &st, |_, o| data.push(x.data()[o]));
    Ok(Tensor::from_parts(shape, data))
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", first.rank())));
    }
    for (i, x) in xs.iter().enumerate().skip(1) {
        let same_rank = x.rank() == first.rank();
        let compatible = same_rank
            && x.shape().iter().zip(first.shape()).enumerate().all(|(a, (p, q))| a == axis || p == q);
        if !compatible {
            return Err(Error::shape(
                "concat",
                format!("input {i} has shape {:?}, incompatible with {:?} along non-concat axes", x.shape(), first.shape()),
            ));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let (outer, _, inner) = split_at_axis(first.shape(), axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid("narrow", format!("axis {axis} out of range for rank {}", x.rank())));
    }
    if len == 0 || start + len > x.shape()[axis] {
        return Err(Error::shape(
            "narrow",
            format!("range {start}..{} exceeds axis {axis} of extent {}", start + len, x.shape()[axis]),
        ));
    }
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Adjoint of [`narrow`]: place `g` at `start` inside zeros of `full_shape`.
pub fn narrow_backward<T: Element>(g: &Tensor<T>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<T> {
    let (outer, n, inner) = split_at_axis(full_shape, axis);
    let len = g.shape()[axis];
    let mut out = vec![T::zero(); full_shape.iter().product()];
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

/// Zero-pad the last two axes by `bottom` rows and `right` columns.
pub fn pad_bottom_right<T: Element>(x: &Tensor<T>, bottom: usize, right: usize) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("pad", format!("need at least two axes, got {:?}", x.shape())));
    }
    if bottom == 0 && right == 0 {
        return Ok(x.clone());
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let planes = x.numel() / (h * w);
    let (hp, wp) = (h + bottom, w + right);
    let mut data = vec![T::zero(); planes * hp * wp];
    for p in 0..planes {
        for y in 0..h {
            let src = &x.data()[(p * h + y) * w..(p * h + y + 1) * w];
            data[(p * hp + y) * wp..(p * hp + y) * wp + w].copy_from_slice(src);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = hp;
    shape[r - 1] = wp;
    Ok(Tensor::from_parts(shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_keeps_row_major_order() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f32);
        let y = x.reshape(&[3, 2]).unwrap();
        // Index-map oracle: element (r, c) of [3,2] is linear index 2r + c.
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(y.at(&[r, c]), (2 * r + c) as f32);
            }
        }
    }

    #[test]
    fn transpose_matches_index_map() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let y = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(y.at(&[c, a, b]), x.at(&[a, b, c]));
                }
            }
        }
        let back = permute(&y, &inverse_perm(&[2, 0, 1])).unwrap();
        assert!(back.bit_eq(&x));
    }

    #[test]
    fn bad_permutation() {
        let x = Tensor::<f32>::zeros(&[2, 2]);
        assert!(permute(&x, &[0, 0]).is_err());
        assert!(permute(&x, &[0]).is_err());
    }

    #[test]
    fn concat_then_narrow_round_trips() {
        let a = Tensor::from_fn(&[2, 2, 3, 3], |i| i as f32);
        let b = Tensor::from_fn(&[2, 2, 3, 3], |i| -(i as f32));
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 4, 3, 3]);
        assert!(narrow(&c, 1, 0, 2).unwrap().bit_eq(&a));
        assert!(narrow(&c, 1, 2, 2).unwrap().bit_eq(&b));
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1, 2, 4, 3]);
        assert!(concat(&[&a, &b], 1).is_err());
        assert!(narrow(&a, 1, 1, 2).is_err());
    }

    #[test]
    fn pad_places_data_top_left() {
        let x = Tensor::new(&[1, 1, 1, 2], vec![1.0f32, 2.0]).unwrap();
        let y = pad_bottom_right(&x, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
        assert_eq!(y.data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }
}

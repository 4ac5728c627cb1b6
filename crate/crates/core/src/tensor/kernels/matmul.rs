use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Dimensions of a batched product `op(a) * op(b)`, where `op` optionally
/// transposes the last two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatmulDims> {
    const OP: &str = "batched_matmul";
    if a.len() < 2 || a.len() != b.len() {
        return Err(Error::shape(OP, format!("operands {a:?} and {b:?} need equal rank >= 2")));
    }
    let r = a.len();
    if a[..r - 2] != b[..r - 2] {
        return Err(Error::shape(OP, format!("batch dims {:?} vs {:?}", &a[..r - 2], &b[..r - 2])));
    }
    let (m, ka) = if ta { (a[r - 1], a[r - 2]) } else { (a[r - 2], a[r - 1]) };
    let (kb, n) = if tb { (b[r - 1], b[r - 2]) } else { (b[r - 2], b[r - 1]) };
    if ka != kb {
        return Err(Error::shape(OP, format!("inner dims disagree: {ka} vs {kb} ({a:?} x {b:?})")));
    }
    Ok(MatmulDims { batch: a[..r - 2].iter().product(), m, k: ka, n })
}

/// Batched product with optional transposition of either operand.
pub fn batched_matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let d = matmul_dims(a.shape(), b.shape(), ta, tb)?;
    let (sa, sb) = (d.m * d.k, d.k * d.n);
    let (rsa, csa) = if ta { (1, d.m as isize) } else { (d.k as isize, 1) };
    let (rsb, csb) = if tb { (1, d.k as isize) } else { (d.n as isize, 1) };
    let mut out = vec![T::zero(); d.batch * d.m * d.n];
    out.par_chunks_mut(d.m * d.n).enumerate().for_each(|(i, c)| {
        T::gemm(
            d.m,
            d.k,
            d.n,
            T::one(),
            &a.data()[i * sa..(i + 1) * sa],
            rsa,
            csa,
            &b.data()[i * sb..(i + 1) * sb],
            rsb,
            csb,
            T::zero(),
            c,
            d.n as isize,
            1,
        );
    });
    let r = a.rank();
    let mut shape = a.shape()[..r - 2].to_vec();
    shape.extend([d.m, d.n]);
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let n = b.shape()[2];
        let mut out = vec![0.0; bs * m * n];
        for q in 0..bs {
            for i in 0..m {
                for j in 0..n {
                    for p in 0..k {
                        out[(q * m + i) * n + j] += a.at(&[q, i, p]) * b.at(&[q, p, j]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_by_two_hand_case() {
        let a = Tensor::new(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = batched_matmul(&a, &b, false, false).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn identity_right_factor() {
        let a = Tensor::from_fn(&[3, 2, 4], |i| i as f32 * 0.5);
        let eye = Tensor::from_fn(&[3, 4, 4], |i| if (i % 16) % 5 == 0 { 1.0 } else { 0.0 });
        assert!(batched_matmul(&a, &eye, false, false).unwrap().bit_eq(&a));
    }

    #[test]
    fn one_by_one_is_scalar_multiply() {
        let a = Tensor::new(&[1, 1], vec![3.0f32]).unwrap();
        let b = Tensor::new(&[1, 1], vec![-2.5f32]).unwrap();
        assert_eq!(batched_matmul(&a, &b, false, false).unwrap().item(), -7.5);
    }

    #[test]
    fn transposed_operands_match_naive() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| ((i * 13) % 7) as f64 - 3.0);
        let b = Tensor::from_fn(&[2, 4, 5], |i| ((i * 5) % 11) as f64 * 0.25);
        let want = naive(&a, &b);
        let at = super::super::layout::permute(&a, &[0, 2, 1]).unwrap();
        let bt = super::super::layout::permute(&b, &[0, 2, 1]).unwrap();
        for (x, y, ta, tb) in [(&a, &b, false, false), (&at, &b, true, false), (&a, &bt, false, true), (&at, &bt, true, true)] {
            let c = batched_matmul(x, y, ta, tb).unwrap();
            assert_eq!(c.shape(), &[2, 3, 5]);
            assert_eq!(c.data(), &want[..], "ta={ta} tb={tb}");
        }
    }

    #[test]
    fn inner_mismatch_is_an_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        assert!(batched_matmul(&a, &a, false, false).is_err());
        let b = Tensor::<f32>::zeros(&[2, 2, 3]);
        let c = Tensor::<f32>::zeros(&[3, 3, 3]);
        assert!(batched_matmul(&b, &c, false, false).is_err());
    }
}

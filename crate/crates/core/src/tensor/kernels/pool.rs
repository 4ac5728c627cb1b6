use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::conv::out_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolGeom {
    pub kind: PoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolGeom {
    /// Non-overlapping window with stride equal to the kernel.
    pub fn tiled(kind: PoolKind, kernel: (usize, usize)) -> Self {
        PoolGeom { kind, kernel, stride: kernel, padding: (0, 0) }
    }
}

pub fn pool2d_out_hw(h: usize, w: usize, g: &PoolGeom) -> Result<(usize, usize)> {
    let ho = out_extent(h, g.kernel.0, g.stride.0, g.padding.0).ok_or_else(|| {
        Error::shape("pool2d", format!("kernel height {} does not fit H={h} with pad {}", g.kernel.0, g.padding.0))
    })?;
    let wo = out_extent(w, g.kernel.1, g.stride.1, g.padding.1).ok_or_else(|| {
        Error::shape("pool2d", format!("kernel width {} does not fit W={w} with pad {}", g.kernel.1, g.padding.1))
    })?;
    Ok((ho, wo))
}

fn check<T: Element>(x: &Tensor<T>, g: &PoolGeom) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::shape("pool2d", format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    if g.padding.0 >= g.kernel.0.max(1) || g.padding.1 >= g.kernel.1.max(1) {
        return Err(Error::invalid("pool2d", "padding must be smaller than the kernel"));
    }
    let (ho, wo) = pool2d_out_hw(x.shape()[2], x.shape()[3], g)?;
    Ok((x.shape()[2], x.shape()[3], ho, wo))
}

// Visits the in-bounds input offsets of one output window in row-major order.
fn window(
    oy: usize,
    ox: usize,
    h: usize,
    w: usize,
    g: &PoolGeom,
    mut f: impl FnMut(usize),
) {
    for ki in 0..g.kernel.0 {
        let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kj in 0..g.kernel.1 {
            let ix = (ox * g.stride.1 + kj) as isize - g.padding.1 as isize;
            if ix < 0 || ix >= w as isize {
                continue;
            }
            f(iy as usize * w + ix as usize);
        }
    }
}

/// Window reduction. Average pooling divides by `kh * kw` (zero padding
/// counts toward the window); max pooling ignores padded positions.
pub fn pool2d_forward<T: Element>(x: &Tensor<T>, g: &PoolGeom) -> Result<Tensor<T>> {
    let (h, w, ho, wo) = check(x, g)?;
    let planes = x.shape()[0] * x.shape()[1];
    let inv = T::one() / T::of((g.kernel.0 * g.kernel.1) as f64);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = match g.kind {
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        window(oy, ox, h, w, g, |i| acc += plane[i]);
                        acc * inv
                    }
                    PoolKind::Max => {
                        let mut best = T::neg_infinity();
                        window(oy, ox, h, w, g, |i| {
                            if plane[i] > best {
                                best = plane[i];
                            }
                        });
                        best
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![x.shape()[0], x.shape()[1], ho, wo], out))
}

/// Max pooling routes each window's gradient to the first maximal element.
pub fn pool2d_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>, g: &PoolGeom) -> Result<Tensor<T>> {
    let (h, w, ho, wo) = check(x, g)?;
    if dy.shape() != [x.shape()[0], x.shape()[1], ho, wo] {
        return Err(Error::shape("pool2d backward", format!("upstream gradient shape {:?}", dy.shape())));
    }
    let planes = x.shape()[0] * x.shape()[1];
    let inv = T::one() / T::of((g.kernel.0 * g.kernel.1) as f64);
    let mut dx = vec![T::zero(); x.numel()];
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        let dplane = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &dy.data()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = gp[oy * wo + ox];
                match g.kind {
                    PoolKind::Avg => window(oy, ox, h, w, g, |i| dplane[i] += gv * inv),
                    PoolKind::Max => {
                        let mut best = T::neg_infinity();
                        let mut arg = None;
                        window(oy, ox, h, w, g, |i| {
                            if arg.is_none() || plane[i] > best {
                                best = plane[i];
                                arg = Some(i);
                            }
                        });
                        if let Some(i) = arg {
                            dplane[i] += gv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_two_by_two() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pool2d_forward(&x, &PoolGeom::tiled(PoolKind::Max, (2, 2))).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn axis_avg_of_constant_is_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 8, 8], 1.75);
        for k in [(4, 1), (1, 4)] {
            let y = pool2d_forward(&x, &PoolGeom::tiled(PoolKind::Avg, k)).unwrap();
            assert!(y.data().iter().all(|&v| v == 1.75));
        }
    }

    #[test]
    fn global_avg_of_one_hot() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        x.data_mut()[5] = 1.0;
        let y = pool2d_forward(&x, &PoolGeom::tiled(PoolKind::Avg, (4, 4))).unwrap();
        assert_eq!(y.item(), 1.0 / 16.0);
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(pool2d_forward(&x, &PoolGeom::tiled(PoolKind::Avg, (4, 1))).is_err());
    }

    #[test]
    fn max_backward_routes_to_argmax() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 5.0, 3.0, 4.0]).unwrap();
        let g = PoolGeom::tiled(PoolKind::Max, (2, 2));
        let dy = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let dx = pool2d_backward(&x, &dy, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}

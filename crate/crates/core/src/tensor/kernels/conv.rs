//! 2-D cross-correlation. Grouped convolutions go through im2col + GEMM;
//! one-channel-per-group (depthwise) convolutions use direct loops.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv2dGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dGeom {
    pub fn same(k: usize) -> Self {
        Conv2dGeom { stride: (1, 1), padding: (k / 2, k / 2), groups: 1 }
    }

    pub fn depthwise(k: usize, channels: usize) -> Self {
        Conv2dGeom { stride: (1, 1), padding: (k / 2, k / 2), groups: channels }
    }

    pub fn pointwise() -> Self {
        Conv2dGeom { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Default for Conv2dGeom {
    fn default() -> Self {
        Self::pointwise()
    }
}

/// Output extent of a strided, padded window sweep along one axis.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Dims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cout_g: usize,
    g: Conv2dGeom,
}

impl Dims {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn is_direct_1x1(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.g.stride == (1, 1)
            && self.g.padding == (0, 0)
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }
}

fn dims<T: Element>(x: &Tensor<T>, w: &Tensor<T>, g: Conv2dGeom) -> Result<Dims> {
    const OP: &str = "conv2d";
    if x.rank() != 4 {
        return Err(Error::shape(OP, format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    if w.rank() != 4 {
        return Err(Error::shape(OP, format!("weight must be [Cout,Cin/groups,kh,kw], got {:?}", w.shape())));
    }
    let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if g.groups == 0 || cin % g.groups != 0 {
        return Err(Error::shape(OP, format!("Cin={cin} is not divisible by groups={}", g.groups)));
    }
    if cout % g.groups != 0 {
        return Err(Error::shape(OP, format!("Cout={cout} is not divisible by groups={}", g.groups)));
    }
    if wc != cin / g.groups {
        return Err(Error::shape(
            OP,
            format!("weight dim 1 is {wc} but Cin/groups = {}", cin / g.groups),
        ));
    }
    let ho = out_extent(h, kh, g.stride.0, g.padding.0).ok_or_else(|| {
        Error::shape(OP, format!("H={h} with pad {} is smaller than kernel height {kh}", g.padding.0))
    })?;
    let wo = out_extent(wd, kw, g.stride.1, g.padding.1).ok_or_else(|| {
        Error::shape(OP, format!("W={wd} with pad {} is smaller than kernel width {kw}", g.padding.1))
    })?;
    Ok(Dims {
        batch,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        ho,
        wo,
        cin_g: cin / g.groups,
        cout_g: cout / g.groups,
        g,
    })
}

/// Unfold the `cin_g` channels starting at `x` into `col[k, ho*wo]`.
fn im2col<T: Element>(x: &[T], d: &Dims, col: &mut [T]) {
    let (sh, sw) = d.g.stride;
    let (ph, pw) = d.g.padding;
    let hw_out = d.ho * d.wo;
    for c in 0..d.cin_g {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..d.ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix >= d.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `col` back into the input planes.
fn col2im<T: Element>(col: &[T], d: &Dims, dx: &mut [T]) {
    let (sh, sw) = d.g.stride;
    let (ph, pw) = d.g.padding;
    let hw_out = d.ho * d.wo;
    for c in 0..d.cin_g {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..d.ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose tap `kj` reads inside the input row.
fn valid_cols(kj: usize, d: &Dims) -> (usize, usize) {
    let (sw, pw) = (d.g.stride.1, d.g.padding.1);
    let lo = if pw > kj { (pw - kj).div_ceil(sw) } else { 0 };
    let hi = if d.w + pw > kj { ((d.w + pw - kj - 1) / sw + 1).min(d.wo) } else { 0 };
    (lo, hi.max(lo))
}

/// Input row read by output row `oy` through tap `ki`, if inside.
fn src_row(oy: usize, ki: usize, d: &Dims) -> Option<usize> {
    let iy = (oy * d.g.stride.0 + ki) as isize - d.g.padding.0 as isize;
    (iy >= 0 && iy < d.h as isize).then_some(iy as usize)
}

// Tap-major loops: each (tap, output row) pair is one strided axpy over
// the valid columns.
fn depthwise_forward_plane<T: Element>(x: &[T], wk: &[T], d: &Dims, out: &mut [T]) {
    let (sw, pw) = (d.g.stride.1, d.g.padding.1);
    out.iter_mut().for_each(|v| *v = T::zero());
    for ki in 0..d.kh {
        for kj in 0..d.kw {
            let wv = wk[ki * d.kw + kj];
            let (lo, hi) = valid_cols(kj, d);
            for oy in 0..d.ho {
                let Some(iy) = src_row(oy, ki, d) else { continue };
                let row = &x[iy * d.w..(iy + 1) * d.w];
                let o = &mut out[oy * d.wo..(oy + 1) * d.wo];
                if sw == 1 {
                    let src = &row[lo + kj - pw..hi + kj - pw];
                    o[lo..hi].iter_mut().zip(src).for_each(|(ov, &xv)| *ov += wv * xv);
                } else {
                    for ox in lo..hi {
                        o[ox] += wv * row[ox * sw + kj - pw];
                    }
                }
            }
        }
    }
}

fn depthwise_backward_plane<T: Element>(x: &[T], wk: &[T], gy: &[T], d: &Dims, dx: &mut [T], dw: &mut [T]) {
    let (sw, pw) = (d.g.stride.1, d.g.padding.1);
    for ki in 0..d.kh {
        for kj in 0..d.kw {
            let wv = wk[ki * d.kw + kj];
            let (lo, hi) = valid_cols(kj, d);
            let mut acc = T::zero();
            for oy in 0..d.ho {
                let Some(iy) = src_row(oy, ki, d) else { continue };
                let g = &gy[oy * d.wo..(oy + 1) * d.wo];
                let row = &x[iy * d.w..(iy + 1) * d.w];
                let drow = &mut dx[iy * d.w..(iy + 1) * d.w];
                if sw == 1 {
                    let (a, b) = (lo + kj - pw, hi + kj - pw);
                    drow[a..b].iter_mut().zip(&g[lo..hi]).for_each(|(dv, &gv)| *dv += gv * wv);
                    acc += g[lo..hi].iter().zip(&row[a..b]).fold(T::zero(), |s, (&gv, &xv)| s + gv * xv);
                } else {
                    for ox in lo..hi {
                        let ix = ox * sw + kj - pw;
                        drow[ix] += g[ox] * wv;
                        acc += g[ox] * row[ix];
                    }
                }
            }
            dw[ki * d.kw + kj] += acc;
        }
    }
}

pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Conv2dGeom,
) -> Result<Tensor<T>> {
    let d = dims(x, w, g)?;
    if let Some(b) = bias {
        if b.shape() != [d.cout] {
            return Err(Error::shape("conv2d", format!("bias must be [{}], got {:?}", d.cout, b.shape())));
        }
    }
    let in_sz = d.cin * d.h * d.w;
    let out_sz = d.cout * d.ho * d.wo;
    let hw_out = d.ho * d.wo;
    let mut out = vec![T::zero(); d.batch * out_sz];
    let xd = x.data();
    let wd = w.data();

    out.par_chunks_mut(out_sz).enumerate().for_each(|(b, ob)| {
        let xb = &xd[b * in_sz..(b + 1) * in_sz];
        if d.is_depthwise() {
            for c in 0..d.cout {
                depthwise_forward_plane(
                    &xb[c * d.h * d.w..(c + 1) * d.h * d.w],
                    &wd[c * d.kh * d.kw..(c + 1) * d.kh * d.kw],
                    &d,
                    &mut ob[c * hw_out..(c + 1) * hw_out],
                );
            }
        } else {
            let k = d.k();
            let mut col = if d.is_direct_1x1() { Vec::new() } else { vec![T::zero(); k * hw_out] };
            for grp in 0..g.groups {
                let xg = &xb[grp * d.cin_g * d.h * d.w..(grp + 1) * d.cin_g * d.h * d.w];
                let src: &[T] = if d.is_direct_1x1() {
                    xg
                } else {
                    im2col(xg, &d, &mut col);
                    &col
                };
                let wg = &wd[grp * d.cout_g * k..(grp + 1) * d.cout_g * k];
                let og = &mut ob[grp * d.cout_g * hw_out..(grp + 1) * d.cout_g * hw_out];
                T::gemm(
                    d.cout_g, k, hw_out, T::one(), wg, k as isize, 1, src, hw_out as isize, 1,
                    T::zero(), og, hw_out as isize, 1,
                );
            }
        }
        if let Some(bias) = bias {
            for (c, &bv) in bias.data().iter().enumerate() {
                ob[c * hw_out..(c + 1) * hw_out].iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(Tensor::from_parts(vec![d.batch, d.cout, d.ho, d.wo], out))
}

pub struct Conv2dGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: Conv2dGeom,
) -> Result<Conv2dGrads<T>> {
    let d = dims(x, w, g)?;
    if dy.shape() != [d.batch, d.cout, d.ho, d.wo] {
        return Err(Error::shape("conv2d backward", format!("upstream gradient shape {:?}", dy.shape())));
    }
    let in_sz = d.cin * d.h * d.w;
    let out_sz = d.cout * d.ho * d.wo;
    let hw_out = d.ho * d.wo;
    let k = d.k();
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();

    // Per-sample input gradients and weight-gradient partials; the partials
    // are summed afterwards in batch order so results do not depend on
    // thread scheduling.
    let per_batch: Vec<(Vec<T>, Vec<T>)> = (0..d.batch)
        .into_par_iter()
        .map(|b| {
            let xb = &xd[b * in_sz..(b + 1) * in_sz];
            let dyb = &dyd[b * out_sz..(b + 1) * out_sz];
            let mut dx = vec![T::zero(); in_sz];
            let mut dw = vec![T::zero(); w.numel()];
            if d.is_depthwise() {
                for c in 0..d.cout {
                    let plane = c * d.h * d.w..(c + 1) * d.h * d.w;
                    let taps = c * d.kh * d.kw..(c + 1) * d.kh * d.kw;
                    depthwise_backward_plane(
                        &xb[plane.clone()],
                        &wd[taps.clone()],
                        &dyb[c * hw_out..(c + 1) * hw_out],
                        &d,
                        &mut dx[plane],
                        &mut dw[taps],
                    );
                }
            } else {
                let mut col = vec![T::zero(); k * hw_out];
                let mut dcol = vec![T::zero(); k * hw_out];
                for grp in 0..g.groups {
                    let xg = &xb[grp * d.cin_g * d.h * d.w..(grp + 1) * d.cin_g * d.h * d.w];
                    let wg = &wd[grp * d.cout_g * k..(grp + 1) * d.cout_g * k];
                    let gy = &dyb[grp * d.cout_g * hw_out..(grp + 1) * d.cout_g * hw_out];
                    let src: &[T] = if d.is_direct_1x1() {
                        xg
                    } else {
                        im2col(xg, &d, &mut col);
                        &col
                    };
                    // dW_g = dY_g [cout_g, hw] * col^T [hw, k]
                    let dwg = &mut dw[grp * d.cout_g * k..(grp + 1) * d.cout_g * k];
                    T::gemm(
                        d.cout_g, hw_out, k, T::one(), gy, hw_out as isize, 1, src, 1,
                        hw_out as isize, T::zero(), dwg, k as isize, 1,
                    );
                    // dcol = W_g^T [k, cout_g] * dY_g [cout_g, hw]
                    let dxg = &mut dx[grp * d.cin_g * d.h * d.w..(grp + 1) * d.cin_g * d.h * d.w];
                    if d.is_direct_1x1() {
                        T::gemm(
                            k, d.cout_g, hw_out, T::one(), wg, 1, k as isize, gy, hw_out as isize,
                            1, T::zero(), dxg, hw_out as isize, 1,
                        );
                    } else {
                        T::gemm(
                            k, d.cout_g, hw_out, T::one(), wg, 1, k as isize, gy, hw_out as isize,
                            1, T::zero(), &mut dcol, hw_out as isize, 1,
                        );
                        col2im(&dcol, &d, dxg);
                    }
                }
            }
            (dx, dw)
        })
        .collect();

    let mut dx = Vec::with_capacity(d.batch * in_sz);
    let mut dw = vec![T::zero(); w.numel()];
    for (dxb, dwb) in per_batch {
        dx.extend_from_slice(&dxb);
        dw.iter_mut().zip(&dwb).for_each(|(a, &b)| *a += b);
    }
    let mut db = vec![T::zero(); d.cout];
    for b in 0..d.batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = b * out_sz + c * hw_out;
            *acc += dyd[start..start + hw_out].iter().copied().fold(T::zero(), |a, v| a + v);
        }
    }
    Ok(Conv2dGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db: Tensor::from_parts(vec![d.cout], db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct-summation reference, written independently of the im2col path.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, g: Conv2dGeom) -> Tensor<f64> {
        let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, cig, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let cog = cout / g.groups;
        let ho = (h + 2 * g.padding.0 - kh) / g.stride.0 + 1;
        let wo = (wd + 2 * g.padding.1 - kw) / g.stride.1 + 1;
        let _ = cin;
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for n in 0..b {
            for co in 0..cout {
                let grp = co / cog;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cig {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                                    let ix = (ox * g.stride.1 + kj) as isize - g.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(&[n, grp * cig + ci, iy as usize, ix as usize])
                                        * w.at(&[co, ci, ki, kj]);
                                }
                            }
                        }
                        let idx = ((n * cout + co) * ho + oy) * wo + ox;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i * 7919) % 23) as f64 * scale - 0.4)
    }

    #[test]
    fn identity_1x1() {
        let x = ramp(&[1, 1, 3, 4], 0.1);
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, Some(&b), Conv2dGeom::pointwise()).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn all_ones_center_is_nine() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, None, Conv2dGeom::same(3)).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
    }

    #[test]
    fn matches_direct_summation() {
        let cases = [
            (Conv2dGeom { stride: (1, 1), padding: (1, 1), groups: 1 }, [2, 4, 5, 6], [3, 4, 3, 3]),
            (Conv2dGeom { stride: (2, 2), padding: (1, 1), groups: 1 }, [2, 3, 7, 6], [4, 3, 3, 3]),
            (Conv2dGeom { stride: (1, 1), padding: (0, 1), groups: 2 }, [1, 4, 4, 5], [6, 2, 1, 3]),
            (Conv2dGeom { stride: (1, 1), padding: (2, 2), groups: 3 }, [2, 3, 6, 6], [3, 1, 5, 5]),
            (Conv2dGeom::pointwise(), [2, 5, 3, 3], [2, 5, 1, 1]),
        ];
        for (g, xs, ws) in cases {
            let x = ramp(&xs, 0.05);
            let w = ramp(&ws, 0.03);
            let got = conv2d_forward(&x, &w, None, g).unwrap();
            let want = naive(&x, &w, g);
            assert!(got.max_abs_diff(&want) < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn depthwise_has_no_cross_channel_paths() {
        let x = ramp(&[1, 2, 5, 5], 0.1);
        let w = ramp(&[2, 1, 3, 3], 0.2);
        let g = Conv2dGeom::depthwise(3, 2);
        let y0 = conv2d_forward(&x, &w, None, g).unwrap();
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[..25] {
            *v += 3.0;
        }
        let y1 = conv2d_forward(&x2, &w, None, g).unwrap();
        assert_eq!(&y0.data()[25..], &y1.data()[25..]);
        assert_ne!(&y0.data()[..25], &y1.data()[..25]);
    }

    #[test]
    fn rejects_indivisible_groups() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 1, 1, 1]);
        let err = conv2d_forward(&x, &w, None, Conv2dGeom { groups: 2, ..Default::default() });
        assert!(err.unwrap_err().to_string().contains("groups"));
    }

    #[test]
    fn rejects_kernel_larger_than_input() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let err = conv2d_forward(&x, &w, None, Conv2dGeom::pointwise()).unwrap_err();
        assert!(err.to_string().contains("H=2"));
    }
}

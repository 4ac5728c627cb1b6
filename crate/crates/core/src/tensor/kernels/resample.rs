use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

// Half-pixel source coordinate: src = (dst + 0.5) * in / out - 0.5, clamped
// at the lower border.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap { i0, i1, frac: src - i0 as f64 }
        })
        .collect()
}

fn check<T: Element>(x: &Tensor<T>, out: (usize, usize)) -> Result<()> {
    if x.rank() != 4 {
        return Err(Error::shape("upsample_bilinear", format!("input must be [B,C,H,W], got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if out.0 < h || out.1 < w {
        return Err(Error::invalid(
            "upsample_bilinear",
            format!("output {}x{} is smaller than input {h}x{w}; downscaling is not supported", out.0, out.1),
        ));
    }
    Ok(())
}

/// Bilinear upsampling with half-pixel centers (corner alignment off).
pub fn upsample_bilinear_forward<T: Element>(x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    check(x, out)?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if out == (h, w) {
        return Ok(x.clone());
    }
    let ty = taps(h, out.0);
    let tx = taps(w, out.1);
    let planes = x.shape()[0] * x.shape()[1];
    let mut data = Vec::with_capacity(planes * out.0 * out.1);
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in &ty {
            let fy = T::of(y.frac);
            for xt in &tx {
                let fx = T::of(xt.frac);
                let top = plane[y.i0 * w + xt.i0] * (T::one() - fx) + plane[y.i0 * w + xt.i1] * fx;
                let bot = plane[y.i1 * w + xt.i0] * (T::one() - fx) + plane[y.i1 * w + xt.i1] * fx;
                data.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[2] = out.0;
    shape[3] = out.1;
    Ok(Tensor::from_parts(shape, data))
}

pub fn upsample_bilinear_backward<T: Element>(
    in_shape: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let out = (dy.shape()[2], dy.shape()[3]);
    if out == (h, w) {
        return Ok(dy.clone());
    }
    let ty = taps(h, out.0);
    let tx = taps(w, out.1);
    let planes = in_shape[0] * in_shape[1];
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dplane = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &dy.data()[p * out.0 * out.1..(p + 1) * out.0 * out.1];
        for (oy, y) in ty.iter().enumerate() {
            let fy = T::of(y.frac);
            for (ox, xt) in tx.iter().enumerate() {
                let fx = T::of(xt.frac);
                let g = gp[oy * out.1 + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                dplane[y.i0 * w + xt.i0] += gt * (T::one() - fx);
                dplane[y.i0 * w + xt.i1] += gt * fx;
                dplane[y.i1 * w + xt.i0] += gb * (T::one() - fx);
                dplane[y.i1 * w + xt.i1] += gb * fx;
            }
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_pixel_row() {
        // Closed form: src = (d + 0.5) / 2 - 0.5 → [-0.25, 0.25, 0.75, 1.25],
        // clamped into [0, 1] and interpolated between 0 and 1.
        let x = Tensor::new(&[1, 1, 1, 2], vec![0.0f64, 1.0]).unwrap();
        let y = upsample_bilinear_forward(&x, (1, 4)).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| i as f32 * 0.3);
        assert!(upsample_bilinear_forward(&x, (3, 3)).unwrap().bit_eq(&x));
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 5], 0.625);
        let y = upsample_bilinear_forward(&x, (12, 20)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.625));
    }

    #[test]
    fn downscale_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(upsample_bilinear_forward(&x, (2, 8)).is_err());
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Start offsets along one axis: `ceil((dim - win) / stride) + 1` windows,
/// the last clamped to end at the border. A window at least as large as the
/// axis gives the single offset 0.
pub fn placements(dim: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::invalid("sliding_window", format!("need 0 < stride <= window, got window {window}, stride {stride}")));
    }
    if window >= dim {
        return Ok(vec![0]);
    }
    let n = (dim - window).div_ceil(stride) + 1;
    Ok((0..n).map(|i| (i * stride).min(dim - window)).collect())
}

/// A window placement in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Every placement over an `h x w` image, row-major. Windows larger than
/// the image are clamped to it.
pub fn windows(h: usize, w: usize, window: (usize, usize), stride: (usize, usize)) -> Result<Vec<Window>> {
    let rows = placements(h, window.0, stride.0)?;
    let cols = placements(w, window.1, stride.1)?;
    let (wh, ww) = (window.0.min(h), window.1.min(w));
    Ok(rows
        .iter()
        .flat_map(|&top| cols.iter().map(move |&left| Window { top, left, height: wh, width: ww }))
        .collect())
}

/// How many windows cover each pixel, row-major.
pub fn coverage(h: usize, w: usize, wins: &[Window]) -> Vec<u32> {
    let mut c = vec![0u32; h * w];
    for win in wins {
        for i in win.top..win.top + win.height {
            c[i * w + win.left..i * w + win.left + win.width].iter_mut().for_each(|v| *v += 1);
        }
    }
    c
}

fn crop4(x: &Tensor<f32>, win: &Window) -> Result<Tensor<f32>> {
    let s = x.shape();
    let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(bc * win.height * win.width);
    for p in 0..bc {
        for i in win.top..win.top + win.height {
            let row = (p * h + i) * w + win.left;
            out.extend_from_slice(&x.data()[row..row + win.width]);
        }
    }
    Tensor::new(&[s[0], s[1], win.height, win.width], out)
}

/// Tiled inference over a `[B, C, H, W]` image. `model` maps a window to
/// `[B, K, h, w]` logits; overlapping logits are averaged per pixel. When a
/// single window covers the image the model output is returned unchanged.
pub fn sliding_window_infer(
    image: &Tensor<f32>,
    window: (usize, usize),
    stride: (usize, usize),
    mut model: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 4 {
        return Err(Error::shape("sliding_window", format!("expected [B,C,H,W], got {s:?}")));
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let wins = windows(h, w, window, stride)?;
    if wins.len() == 1 {
        return model(image);
    }
    let mut acc: Vec<f64> = Vec::new();
    let mut k = 0;
    for win in &wins {
        let y = model(&crop4(image, win)?)?;
        let ys = y.shape();
        if ys.len() != 4 || ys[0] != b || ys[2] != win.height || ys[3] != win.width {
            return Err(Error::shape("sliding_window", format!("model returned {ys:?} for a {}x{} window", win.height, win.width)));
        }
        if acc.is_empty() {
            k = ys[1];
            acc = vec![0.0; b * k * h * w];
        } else if ys[1] != k {
            return Err(Error::shape("sliding_window", "class count changed between windows"));
        }
        for p in 0..b * k {
            for i in 0..win.height {
                let dst = (p * h + win.top + i) * w + win.left;
                let src = (p * win.height + i) * win.width;
                for j in 0..win.width {
                    acc[dst + j] += y.data()[src + j] as f64;
                }
            }
        }
    }
    let cov = coverage(h, w, &wins);
    let data = acc.iter().enumerate().map(|(i, &v)| (v / cov[i % (h * w)] as f64) as f32).collect();
    Tensor::new(&[b, k, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn large_image_placements() {
        let wins = windows(3000, 4000, (1024, 1024), (512, 512)).unwrap();
        assert_eq!(wins.len(), 35);
        assert_eq!(placements(3000, 1024, 512).unwrap(), vec![0, 512, 1024, 1536, 1976]);
        assert!(coverage(3000, 4000, &wins).iter().all(|&c| c >= 1));
    }

    #[test]
    fn bad_strides_are_rejected() {
        assert!(placements(10, 4, 0).is_err());
        assert!(placements(10, 4, 5).is_err());
    }

    #[test]
    fn single_window_is_the_direct_output() {
        let img = Tensor::from_fn(&[1, 2, 5, 6], |i| i as f32 * 0.1);
        let direct = |x: &Tensor<f32>| Ok(x.map(|v| v.sin()));
        let got = sliding_window_infer(&img, (8, 8), (4, 4), direct).unwrap();
        assert!(got.bit_eq(&direct(&img).unwrap()));
    }

    proptest! {
        #[test]
        fn pointwise_models_are_reproduced(h in 1usize..30, w in 1usize..30, win in 1usize..12, s in 1usize..12) {
            prop_assume!(s <= win);
            let wins = windows(h, w, (win, win), (s, s)).unwrap();
            prop_assert!(coverage(h, w, &wins).iter().all(|&c| c >= 1));
            prop_assert!(wins.iter().all(|x| x.top + x.height <= h && x.left + x.width <= w));
            // A per-pixel model gives the same answer however it is tiled.
            let img = Tensor::from_fn(&[1, 1, h, w], |i| (i as f32 * 0.37).cos());
            let got = sliding_window_infer(&img, (win, win), (s, s), |x| Ok(x.map(|v| 2.0 * v))).unwrap();
            prop_assert!(got.max_abs_diff(&img.map(|v| 2.0 * v)) < 1e-6);
        }
    }
}

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CROP_ALPHA: f64 = 0.75;
pub const CROP_MAX_ITER: usize = 10;

/// Conventional ImageNet channel statistics for inputs scaled to [0, 1].
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// An image `[C, H, W]` with its class-id mask in row-major `H x W` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Vec<u32>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Vec<u32>) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[1] * s[2] != mask.len() {
            return Err(Error::shape("Sample", format!("image {s:?} with {} mask pixels", mask.len())));
        }
        Ok(Sample { image, mask })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Result of [`random_crop`].
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub sample: Sample,
    pub top: usize,
    pub left: usize,
    /// Placements drawn, including the returned one.
    pub draws: usize,
}

/// Largest share of any single class among non-ignored pixels. A mask
/// with nothing scored counts as fully dominated.
pub fn dominant_fraction(mask: &[u32], ignore: u32) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    let mut n = 0usize;
    for &l in mask.iter().filter(|&&l| l != ignore) {
        *counts.entry(l).or_insert(0usize) += 1;
        n += 1;
    }
    match counts.values().max() {
        Some(&m) => m as f64 / n as f64,
        None => 1.0,
    }
}

/// Crop `sample` at a uniform placement, re-drawing while one class covers
/// more than `alpha` of the crop. After `max_iter` draws the last crop is
/// returned as is.
pub fn random_crop(
    sample: &Sample,
    size: (usize, usize),
    alpha: f64,
    max_iter: usize,
    ignore: u32,
    rng: &mut Rng,
) -> Result<Crop> {
    let (h, w) = (sample.height(), sample.width());
    if size.0 == 0 || size.1 == 0 || size.0 > h || size.1 > w {
        return Err(Error::invalid("random_crop", format!("crop {size:?} does not fit a {h}x{w} image")));
    }
    let max_iter = max_iter.max(1);
    let mut draws = 0;
    loop {
        let top = rng.below(h - size.0 + 1);
        let left = rng.below(w - size.1 + 1);
        draws += 1;
        let crop = crop_at(sample, top, left, size)?;
        if draws >= max_iter || dominant_fraction(&crop.mask, ignore) <= alpha {
            return Ok(Crop { sample: crop, top, left, draws });
        }
    }
}

pub fn crop_at(sample: &Sample, top: usize, left: usize, size: (usize, usize)) -> Result<Sample> {
    let (c, h, w) = (sample.channels(), sample.height(), sample.width());
    if top + size.0 > h || left + size.1 > w {
        return Err(Error::invalid("crop", format!("window at ({top},{left}) of {size:?} exceeds {h}x{w}")));
    }
    let src = sample.image.data();
    let mut img = Vec::with_capacity(c * size.0 * size.1);
    for ch in 0..c {
        for i in top..top + size.0 {
            let row = (ch * h + i) * w + left;
            img.extend_from_slice(&src[row..row + size.1]);
        }
    }
    let mut mask = Vec::with_capacity(size.0 * size.1);
    for i in top..top + size.0 {
        mask.extend_from_slice(&sample.mask[i * w + left..i * w + left + size.1]);
    }
    Sample::new(Tensor::new(&[c, size.0, size.1], img)?, mask)
}

fn channel_axis(shape: &[usize]) -> Result<usize> {
    match shape.len() {
        3 => Ok(0),
        4 => Ok(1),
        _ => Err(Error::shape("standardize", format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"))),
    }
}

fn per_channel(x: &Tensor<f32>, mean: &[f64], std: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f32>> {
    let shape = x.shape();
    let axis = channel_axis(shape)?;
    let c = shape[axis];
    if mean.len() != c || std.len() != c {
        return Err(Error::shape("standardize", format!("{c} channels, {} means, {} stds", mean.len(), std.len())));
    }
    if let Some(i) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::invalid("standardize", format!("std[{i}] = {} must be positive", std[i])));
    }
    let plane = shape[axis + 1] * shape[axis + 2];
    let mut out = x.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        let ch = (k / plane) % c;
        *v = f(*v as f64, mean[ch], std[ch]) as f32;
    }
    Ok(out)
}

/// `(x - mean) / std` per channel of a `[C,H,W]` or `[B,C,H,W]` image.
pub fn standardize(x: &Tensor<f32>, mean: &[f64], std: &[f64]) -> Result<Tensor<f32>> {
    per_channel(x, mean, std, |v, m, s| (v - m) / s)
}

pub fn destandardize(x: &Tensor<f32>, mean: &[f64], std: &[f64]) -> Result<Tensor<f32>> {
    per_channel(x, mean, std, |v, m, s| v * s + m)
}

/// One of the eight symmetries of the square: `rot` quarter turns
/// counter-clockwise, then an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(|i| Dihedral { rot: i % 4, flip: i >= 4 })
    }

    pub fn sample(rng: &mut Rng) -> Dihedral {
        let i = rng.below(8) as u8;
        Dihedral { rot: i % 4, flip: i >= 4 }
    }

    /// Output extent for an `h x w` input.
    pub fn extent(self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinate of output pixel `(i, j)` for an `h x w` input.
    fn source(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.extent(h, w);
        let j = if self.flip { ow - 1 - j } else { j };
        let _ = oh;
        match self.rot % 4 {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (h - 1 - j, i),
        }
    }

    /// Apply to each `h x w` plane of `src`.
    pub fn apply_planes<V: Copy>(self, src: &[V], h: usize, w: usize) -> Vec<V> {
        let (oh, ow) = self.extent(h, w);
        let planes = src.len() / (h * w);
        let mut out = Vec::with_capacity(src.len());
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let (si, sj) = self.source(i, j, h, w);
                    out.push(src[base + si * w + sj]);
                }
            }
        }
        out
    }

    pub fn apply(self, s: &Sample) -> Result<Sample> {
        let (c, h, w) = (s.channels(), s.height(), s.width());
        let (oh, ow) = self.extent(h, w);
        let img = Tensor::new(&[c, oh, ow], self.apply_planes(s.image.data(), h, w))?;
        Sample::new(img, self.apply_planes(&s.mask, h, w))
    }
}

pub fn flip_h(s: &Sample) -> Result<Sample> {
    Dihedral { rot: 0, flip: true }.apply(s)
}

pub fn flip_v(s: &Sample) -> Result<Sample> {
    Dihedral { rot: 2, flip: true }.apply(s)
}

pub fn rot90(s: &Sample) -> Result<Sample> {
    Dihedral { rot: 1, flip: false }.apply(s)
}

/// Random flip/rotation applied jointly to image and mask.
pub fn augment(s: &Sample, rng: &mut Rng) -> Result<Sample> {
    Dihedral::sample(rng).apply(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize, seed: u64) -> Sample {
        let mut r = Rng::new(seed);
        let img = Tensor::from_fn(&[3, h, w], |_| r.next_f64() as f32);
        let mask = (0..h * w).map(|_| r.below(4) as u32).collect();
        Sample::new(img, mask).unwrap()
    }

    #[test]
    fn single_class_image_uses_every_draw() {
        let mut s = sample(20, 30, 1);
        s.mask.iter_mut().for_each(|m| *m = 2);
        let c = random_crop(&s, (8, 8), CROP_ALPHA, CROP_MAX_ITER, 255, &mut Rng::new(3)).unwrap();
        assert_eq!(c.draws, 10);
    }

    #[test]
    fn mixed_image_accepts_first_draw() {
        let mut s = sample(16, 16, 1);
        for (i, m) in s.mask.iter_mut().enumerate() {
            *m = (i % 2) as u32;
        }
        let c = random_crop(&s, (4, 4), CROP_ALPHA, CROP_MAX_ITER, 255, &mut Rng::new(3)).unwrap();
        assert_eq!(c.draws, 1);
    }

    #[test]
    fn crop_larger_than_image_is_rejected() {
        let s = sample(8, 8, 1);
        assert!(random_crop(&s, (9, 4), CROP_ALPHA, CROP_MAX_ITER, 255, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn dominant_fraction_skips_ignored() {
        assert_eq!(dominant_fraction(&[1, 1, 2, 255, 255], 255), 2.0 / 3.0);
        assert_eq!(dominant_fraction(&[255], 255), 1.0);
    }

    #[test]
    fn standardize_cases() {
        let s = sample(4, 5, 2);
        let x = &s.image;
        assert!(standardize(x, &[0.0; 3], &[1.0; 3]).unwrap().bit_eq(x));
        let means: Vec<f64> = (0..3).map(|c| x.data()[c * 20..(c + 1) * 20].iter().map(|&v| v as f64).sum::<f64>() / 20.0).collect();
        let z = standardize(x, &means, &[1.0; 3]).unwrap();
        for c in 0..3 {
            let m: f64 = z.data()[c * 20..(c + 1) * 20].iter().map(|&v| v as f64).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-6);
        }
        let y = destandardize(&standardize(x, &IMAGENET_MEAN, &IMAGENET_STD).unwrap(), &IMAGENET_MEAN, &IMAGENET_STD).unwrap();
        assert!(y.max_abs_diff(x) < 1e-6);
        assert!(standardize(x, &[0.0; 3], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn rotation_matches_hand_layout() {
        // 2x3 plane:  a b c      rotated ccw:  c f
        //             d e f                    b e
        //                                      a d
        let out = Dihedral { rot: 1, flip: false }.apply_planes(&['a', 'b', 'c', 'd', 'e', 'f'], 2, 3);
        assert_eq!(out, vec!['c', 'f', 'b', 'e', 'a', 'd']);
        let out = Dihedral { rot: 2, flip: true }.apply_planes(&['a', 'b', 'c', 'd', 'e', 'f'], 2, 3);
        assert_eq!(out, vec!['d', 'e', 'f', 'a', 'b', 'c']);
    }

    proptest! {
        #[test]
        fn crop_stays_inside(seed in 0u64..1000, h in 4usize..20, w in 4usize..20) {
            let s = sample(h, w, seed);
            let mut r = Rng::new(seed);
            let size = (1 + r.below(h), 1 + r.below(w));
            let c = random_crop(&s, size, CROP_ALPHA, CROP_MAX_ITER, 255, &mut r).unwrap();
            prop_assert!(c.top + size.0 <= h && c.left + size.1 <= w);
            prop_assert!(c.draws >= 1 && c.draws <= CROP_MAX_ITER);
            prop_assert_eq!(c.sample.mask[0], s.mask[c.top * w + c.left]);
        }

        #[test]
        fn dihedral_identities(seed in 0u64..1000, h in 1usize..9, w in 1usize..9) {
            let s = sample(h, w, seed);
            prop_assert_eq!(&flip_h(&flip_h(&s).unwrap()).unwrap(), &s);
            prop_assert_eq!(&flip_v(&flip_v(&s).unwrap()).unwrap(), &s);
            let mut r = s.clone();
            for _ in 0..4 {
                r = rot90(&r).unwrap();
            }
            prop_assert_eq!(&r, &s);
            let mut hist = s.mask.clone();
            hist.sort_unstable();
            for t in Dihedral::all() {
                let a = t.apply(&s).unwrap();
                let mut m = a.mask.clone();
                m.sort_unstable();
                prop_assert_eq!(&m, &hist);
                // Image and mask move together: pixel values follow their labels.
                let (oh, ow) = t.extent(h, w);
                prop_assert_eq!(a.image.shape(), &[3, oh, ow][..]);
            }
        }

        #[test]
        fn augment_moves_image_and_mask_jointly(seed in 0u64..1000) {
            let (h, w) = (5, 7);
            let img = Tensor::from_fn(&[1, h, w], |i| i as f32);
            let s = Sample::new(img, (0..(h * w) as u32).collect()).unwrap();
            let a = augment(&s, &mut Rng::new(seed)).unwrap();
            for (v, &m) in a.image.data().iter().zip(&a.mask) {
                prop_assert_eq!(*v, m as f32);
            }
        }
    }
}

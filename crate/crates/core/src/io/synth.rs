//! Deterministic toy segmentation data: rectangles and discs on a noisy
//! background.
//!
//! Recipe, per image (all draws from the stream keyed by seed, split and
//! index):
//! - background colour uniform in [0.2, 0.4] per channel;
//! - 1 to 3 axis-aligned rectangles with sides 8 to 24 px, colour
//!   (0.85, 0.30, 0.25) jittered by up to 0.1 per channel, class 1;
//! - then 1 to 3 discs of radius 4 to 12 px, colour (0.25, 0.40, 0.85)
//!   jittered the same way, class 2; later shapes paint over earlier ones;
//! - Gaussian noise with sigma 0.05, clamped to [0, 1] and quantized to
//!   8 bits, so images round-trip through PPM exactly.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::Sample;

pub const TOY_CLASSES: usize = 3;
pub const TOY_SIZE: usize = 64;
pub const TOY_TRAIN: usize = 200;
pub const TOY_VAL: usize = 50;

const RECT_COLOUR: [f64; 3] = [0.85, 0.30, 0.25];
const DISC_COLOUR: [f64; 3] = [0.25, 0.40, 0.85];
const JITTER: f64 = 0.1;
const NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

fn jitter(rng: &mut Rng, base: [f64; 3]) -> [f64; 3] {
    base.map(|c| c + rng.uniform(-JITTER, JITTER))
}

/// Image `index` of `split` at `size x size`.
pub fn toy_sample(seed: u64, split: Split, index: usize, size: usize) -> Sample {
    let mut rng = Rng::new(seed).fork_named("toy").fork_named(split.label()).fork(index as u64);
    let bg = [0; 3].map(|_| rng.uniform(0.2, 0.4));
    let mut colour = vec![bg; size * size];
    let mut mask = vec![0u32; size * size];

    for _ in 0..1 + rng.below(3) {
        let (h, w) = (8 + rng.below(17), 8 + rng.below(17));
        let (top, left) = (rng.below(size - h.min(size) + 1), rng.below(size - w.min(size) + 1));
        let c = jitter(&mut rng, RECT_COLOUR);
        for i in top..(top + h).min(size) {
            for j in left..(left + w).min(size) {
                colour[i * size + j] = c;
                mask[i * size + j] = 1;
            }
        }
    }
    for _ in 0..1 + rng.below(3) {
        let r = 4 + rng.below(9);
        let (cy, cx) = (rng.below(size), rng.below(size));
        let c = jitter(&mut rng, DISC_COLOUR);
        for i in cy.saturating_sub(r)..(cy + r + 1).min(size) {
            for j in cx.saturating_sub(r)..(cx + r + 1).min(size) {
                let (dy, dx) = (i as f64 - cy as f64, j as f64 - cx as f64);
                if dy * dy + dx * dx <= (r * r) as f64 {
                    colour[i * size + j] = c;
                    mask[i * size + j] = 2;
                }
            }
        }
    }

    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for p in 0..plane {
        for ch in 0..3 {
            let v = (colour[p][ch] + NOISE * rng.normal()).clamp(0.0, 1.0);
            data[ch * plane + p] = (v * 255.0).round() as f32 / 255.0;
        }
    }
    Sample::new(Tensor::new(&[3, size, size], data).expect("sizes agree"), mask).expect("sizes agree")
}

/// The first `n` images of a split.
pub fn toy_split(seed: u64, split: Split, n: usize, size: usize) -> Vec<Sample> {
    (0..n).map(|i| toy_sample(seed, split, i, size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_independent_of_count() {
        let a = toy_split(7, Split::Train, 5, 32);
        let b = toy_split(7, Split::Train, 3, 32);
        assert_eq!(&a[..3], &b[..]);
        assert_ne!(toy_sample(7, Split::Train, 0, 32), toy_sample(7, Split::Val, 0, 32));
    }

    #[test]
    fn every_class_appears_and_values_are_8_bit() {
        let s = toy_sample(3, Split::Train, 4, TOY_SIZE);
        let mut hist = [0usize; TOY_CLASSES];
        for t in toy_split(3, Split::Train, 10, TOY_SIZE) {
            t.mask.iter().for_each(|&m| hist[m as usize] += 1);
        }
        assert!(hist.iter().all(|&n| n > 0), "{hist:?}");
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v) && ((v * 255.0).round() / 255.0 - v).abs() < 1e-7));
    }
}

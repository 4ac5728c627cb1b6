use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Interleaves `groups` equal channel groups: output channel `j` holds input
/// channel `(j % groups) * (C / groups) + j / groups`.
pub fn channel_shuffle<T: Element>(g: &mut Graph<T>, x: Var, groups: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("channel_shuffle", format!("expected [B,C,H,W], got {shape:?}")));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid("channel_shuffle", format!("{c} channels not divisible into {groups} groups")));
    }
    if groups == 1 {
        return Ok(x);
    }
    let y = g.reshape(x, &[b, groups, c / groups, h * w])?;
    let y = g.permute(y, &[0, 2, 1, 3])?;
    g.reshape(y, &shape)
}

/// Source channel of output channel `j`.
pub fn shuffle_source(j: usize, channels: usize, groups: usize) -> usize {
    (j % groups) * (channels / groups) + j / groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn ramp(b: usize, c: usize, hw: usize) -> Tensor<f32> {
        Tensor::from_fn(&[b, c, hw, 1], |i| (i / hw % c) as f32 * 1000.0 + (i % hw) as f32)
    }

    fn channels_of(t: &Tensor<f32>, c: usize, hw: usize) -> Vec<usize> {
        (0..c).map(|j| (t.data()[j * hw] / 1000.0) as usize).collect()
    }

    #[test]
    fn four_channels_two_groups() {
        let mut g = Graph::new();
        let x = g.constant(ramp(1, 4, 3));
        let y = channel_shuffle(&mut g, x, 2).unwrap();
        assert_eq!(channels_of(g.value(y), 4, 3), vec![0, 2, 1, 3]);
    }

    #[test]
    fn indivisible_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(ramp(1, 6, 1));
        assert!(channel_shuffle(&mut g, x, 4).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_and_inverse(b in 1usize..3, groups in 1usize..5, per in 1usize..5, hw in 1usize..5) {
            let c = groups * per;
            let mut g = Graph::new();
            let t = ramp(b, c, hw);
            let x = g.constant(t.clone());
            let y = channel_shuffle(&mut g, x, groups).unwrap();
            let yt = g.value(y).clone();
            for bi in 0..b {
                for j in 0..c {
                    let src = shuffle_source(j, c, groups);
                    let out = &yt.data()[(bi * c + j) * hw..][..hw];
                    let inp = &t.data()[(bi * c + src) * hw..][..hw];
                    prop_assert!(out.iter().zip(inp).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
            let z = channel_shuffle(&mut g, y, c / groups).unwrap();
            prop_assert!(g.value(z).bit_eq(&t));
        }
    }
}

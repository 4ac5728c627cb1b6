use crate::autograd::Graph;
use crate::blocks::{row_entropy_map, WindowLayout};
use crate::error::{Error, Result};
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::kernels::pad_bottom_right;
use crate::tensor::Tensor;

use super::Network;

/// A single-channel map at some decoder stage's resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct StageMap {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl StageMap {
    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl StageMap {
    /// Top-left `height x width` corner.
    fn crop(self, height: usize, width: usize) -> StageMap {
        let values = (0..height).flat_map(|i| self.values[i * self.width..i * self.width + width].to_vec()).collect();
        StageMap { name: self.name, height, width, values }
    }
}

/// Maps for the first image of a `[B, C, H, W]` batch, in eval mode:
/// the normalized row entropy of each LCRM's window attention, then the
/// two channels of the SISM spatial selection (mid- and long-range).
/// Images whose sides are not multiples of 32 are zero-padded at the
/// bottom/right and the maps cropped to the part covering the image.
pub fn attention_maps(net: &Network, store: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Vec<StageMap>> {
    let sh = image.shape();
    if sh.len() != 4 {
        return Err(Error::shape("attention_maps", format!("expected [B,C,H,W], got {sh:?}")));
    }
    let (h, w) = (sh[2], sh[3]);
    let (ph, pw) = (h.next_multiple_of(32), w.next_multiple_of(32));
    let padded = if (ph, pw) == (h, w) { image.clone() } else { pad_bottom_right(image, ph - h, pw - w)? };
    let maps = raw_maps(net, store, padded)?;
    Ok(maps
        .into_iter()
        .map(|m| {
            let stride = ph / m.height;
            let (mh, mw) = (h.div_ceil(stride), w.div_ceil(stride));
            m.crop(mh, mw)
        })
        .collect())
}

fn raw_maps(net: &Network, store: &ParamStore<f32>, image: Tensor<f32>) -> Result<Vec<StageMap>> {
    let mut g = Graph::new();
    let mut s = Session::new(&mut g, store, Mode::Eval, false);
    s.enable_probes();
    let x = s.constant(image);
    net.forward(&mut s, x)?;
    let probe = |name: &str| {
        s.probes()
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::invalid("attention_maps", format!("no probe `{name}`")))
    };
    let mut maps = Vec::new();
    for (i, lcrm) in net.decoder.lcrm.iter().enumerate() {
        let stage = s.value(probe(&format!("decoder.lcrm{}", i + 1))?).shape().to_vec();
        let probs = s.value(probe(&format!("{}.probs", lcrm.global.name))?);
        let layout = WindowLayout::new(stage[0], stage[2], stage[3], lcrm.global.window, lcrm.global.heads);
        let ent = row_entropy_map(probs, &layout)?;
        let plane = stage[2] * stage[3];
        maps.push(StageMap {
            name: format!("lcrm{}_entropy", i + 1),
            height: stage[2],
            width: stage[3],
            values: ent.data()[..plane].to_vec(),
        });
    }
    let attn = s.value(probe(&format!("{}.attn", net.decoder.sism.name))?);
    let sh = attn.shape();
    let plane = sh[2] * sh[3];
    for (c, label) in ["mid", "long"].iter().enumerate() {
        maps.push(StageMap {
            name: format!("sism_attn_{label}"),
            height: sh[2],
            width: sh[3],
            values: attn.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect(),
        });
    }
    Ok(maps)
}

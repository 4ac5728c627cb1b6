use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvNormAct, Session};
use crate::tensor::Element;

use super::config::DecoderConfig;

/// Minimal convolutional encoder producing features at strides 4, 8, 16
/// and 32. Each stage has two 3x3 conv + norm + activation layers; the
/// first stage downsamples twice, later stages once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StubEncoder {
    pub stages: Vec<[ConvNormAct; 2]>,
}

impl StubEncoder {
    pub fn new(cfg: &DecoderConfig) -> Self {
        let b = &cfg.block;
        let mut cin = cfg.in_channels;
        let stages = cfg
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let second_stride = if i == 0 { 2 } else { 1 };
                let layer = |j: usize, cin: usize, stride: usize| {
                    ConvNormAct::new(
                        Conv::new(format!("encoder.stage{}.conv{}", i + 1, j + 1), cin, c, 3).strided(stride),
                        b.norm,
                        Some(b.activation),
                    )
                };
                let stage = [layer(0, cin, 2), layer(1, c, second_stride)];
                cin = c;
                stage
            })
            .collect();
        StubEncoder { stages }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.stages.iter().flatten().try_for_each(|l| l.declare(b))
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, image: Var) -> Result<[Var; 4]> {
        let shape = s.shape(image).to_vec();
        let cin = self.stages[0][0].conv.cin;
        if shape.len() != 4 || shape[1] != cin {
            return Err(Error::shape("encoder", format!("expected [B,{cin},H,W] image, got {shape:?}")));
        }
        if !shape[2].is_multiple_of(32) || !shape[3].is_multiple_of(32) || shape[2] == 0 || shape[3] == 0 {
            return Err(Error::shape(
                "encoder",
                format!("image height and width must be positive multiples of 32, got {}x{}", shape[2], shape[3]),
            ));
        }
        let mut x = image;
        let mut feats = Vec::with_capacity(4);
        for stage in &self.stages {
            for layer in stage {
                x = layer.forward(s, x)?;
            }
            feats.push(x);
        }
        Ok([feats[0], feats[1], feats[2], feats[3]])
    }
}

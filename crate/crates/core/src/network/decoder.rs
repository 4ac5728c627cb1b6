use crate::autograd::Var;
use crate::blocks::{Cffm, Lcrm, Sism};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvNormAct, Mode, Session};
use crate::tensor::Element;

use super::config::{DecoderConfig, STRIDES};

/// 1x1 classifier followed by a bilinear upsample to label resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Head {
    pub conv: Conv,
}

impl Head {
    pub fn new(name: impl Into<String>, cin: usize, classes: usize) -> Self {
        Head { conv: Conv::pointwise(name, cin, classes) }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.conv.declare(b)
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var, out: (usize, usize)) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        if s.shape(y)[2..] == [out.0, out.1] {
            return Ok(y);
        }
        s.upsample_bilinear(y, out)
    }
}

/// Decoder over four encoder scales: projection of the deepest feature,
/// then three rounds of LCRM and CFFM towards stride 4, then SISM and the
/// segmentation head. Each LCRM output also feeds an auxiliary head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoder {
    pub proj: ConvNormAct,
    pub lcrm: [Lcrm; 3],
    pub cffm: [Cffm; 3],
    pub sism: Sism,
    pub head: Head,
    pub aux: Option<[Head; 3]>,
    encoder_channels: [usize; 4],
}

/// Logits at input resolution plus the auxiliary logits (empty in eval
/// mode or when auxiliary heads are disabled).
#[derive(Clone, Debug)]
pub struct Output {
    pub logits: Var,
    pub aux: Vec<Var>,
}

impl Decoder {
    pub fn new(cfg: &DecoderConfig) -> Self {
        let b = cfg.block_config();
        let (d, k) = (cfg.decode_channels, cfg.num_classes);
        let e = cfg.encoder_channels;
        let lcrm = |i: usize| Lcrm::new(format!("decoder.lcrm{i}"), &b);
        // CFFM i fuses with encoder stage 3, 2, 1 in turn.
        let cffm = |i: usize| Cffm::new(format!("decoder.cffm{i}"), &b, e[3 - i]);
        let aux = |i: usize| Head::new(format!("decoder.aux{i}"), d, k);
        Decoder {
            proj: ConvNormAct::new(Conv::pointwise("decoder.proj", e[3], d), b.norm, Some(b.activation)),
            lcrm: [lcrm(1), lcrm(2), lcrm(3)],
            cffm: [cffm(1), cffm(2), cffm(3)],
            sism: Sism::new("decoder.sism", &b),
            head: Head::new("decoder.head", d, k),
            aux: cfg.aux_heads.then(|| [aux(1), aux(2), aux(3)]),
            encoder_channels: e,
        }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.proj.declare(b)?;
        for i in 0..3 {
            self.lcrm[i].declare(b)?;
            if let Some(aux) = &self.aux {
                aux[i].declare(b)?;
            }
            self.cffm[i].declare(b)?;
        }
        self.sism.declare(b)?;
        self.head.declare(b)
    }

    fn check_features<T: Element>(&self, s: &Session<'_, T>, feats: &[Var; 4], out: (usize, usize)) -> Result<()> {
        let b = s.shape(feats[0])[0];
        for (i, (&f, &stride)) in feats.iter().zip(&STRIDES).enumerate() {
            let want = [b, self.encoder_channels[i], out.0 / stride, out.1 / stride];
            if s.shape(f) != want {
                return Err(Error::shape(
                    "decoder",
                    format!("encoder stage {} feature is {:?}, expected {want:?}", i + 1, s.shape(f)),
                ));
            }
        }
        Ok(())
    }

    /// `out` is the label resolution, `(H, W)` of the input image.
    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, feats: &[Var; 4], out: (usize, usize)) -> Result<Output> {
        self.check_features(s, feats, out)?;
        let train_aux = s.mode == Mode::Train;
        let mut x = self.proj.forward(s, feats[3])?;
        let mut aux = Vec::new();
        for i in 0..3 {
            x = self.lcrm[i].forward(s, x)?;
            s.probe(format!("decoder.lcrm{}", i + 1), x);
            if let (true, Some(heads)) = (train_aux, &self.aux) {
                aux.push(heads[i].forward(s, x, out)?);
            }
            x = self.cffm[i].forward(s, x, feats[2 - i])?;
        }
        x = self.sism.forward(s, x)?;
        let logits = self.head.forward(s, x, out)?;
        Ok(Output { logits, aux })
    }
}

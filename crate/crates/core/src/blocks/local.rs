use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};
use crate::tensor::Element;

/// Convolutional detail branch: a pointwise reduction to half width feeds a
/// depthwise-separable path and a pixel-wise gating path whose outputs are
/// concatenated back to the input width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalBranch {
    pub name: String,
    pub channels: usize,
    pub reduce: Conv,
    pub dw: Conv,
    pub dw_pw: Conv,
    pub gate1: Conv,
    pub gate2: Conv,
}

impl LocalBranch {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let name = name.into();
        let h = channels / 2;
        LocalBranch {
            reduce: Conv::pointwise(format!("{name}.reduce"), channels, h),
            dw: Conv::depthwise(format!("{name}.dw"), h, 3),
            dw_pw: Conv::pointwise(format!("{name}.dw_pw"), h, h),
            gate1: Conv::pointwise(format!("{name}.gate1"), h, h),
            gate2: Conv::pointwise(format!("{name}.gate2"), h, h),
            name,
            channels,
        }
    }

    pub fn convs(&self) -> [&Conv; 5] {
        [&self.reduce, &self.dw, &self.dw_pw, &self.gate1, &self.gate2]
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.convs().iter().try_for_each(|c| c.declare(b))
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.shape(x);
        if self.channels < 2 || !self.channels.is_multiple_of(2) || shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "local_branch",
                format!("`{}` expects [B,{},H,W] with even width, got {shape:?}", self.name, self.channels),
            ));
        }
        let lt = self.reduce.forward(s, x)?;
        let l1 = self.dw.forward(s, lt)?;
        let l1 = self.dw_pw.forward(s, l1)?;
        let g = self.gate1.forward(s, lt)?;
        let g = self.gate2.forward(s, g)?;
        let l2 = s.mul(g, lt)?;
        s.concat(&[l1, l2], 1)
    }
}

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Session};
use crate::tensor::kernels::{Conv2dGeom, Reduce};
use crate::tensor::Element;

/// Efficient channel attention: a 1-D convolution of odd width across the
/// pooled channel vector yields a sigmoid gate per channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eca {
    pub name: String,
    pub kernel: usize,
}

impl Eca {
    pub fn new(name: impl Into<String>, kernel: usize) -> Self {
        Eca { name: name.into(), kernel }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.conv.weight", self.name)
    }

    pub fn num_params(&self) -> usize {
        self.kernel
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        b.kaiming(self.weight_name(), &[1, 1, 1, self.kernel], self.kernel)
    }

    /// Per-channel gate in `(0, 1)`, shaped `[B, C, 1, 1]`.
    pub fn gate<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.shape(x).to_vec();
        if shape.len() != 4 || shape[1] == 0 {
            return Err(Error::shape("eca", format!("expected [B,C,H,W] with C >= 1, got {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        let p = s.reduce(x, 3, Reduce::Mean)?;
        let p = s.reduce(p, 2, Reduce::Mean)?;
        let p = s.reshape(p, &[b, 1, 1, c])?;
        let w = s.param(&self.weight_name())?;
        let geom = Conv2dGeom { stride: (1, 1), padding: (0, self.kernel / 2), groups: 1 };
        let a = s.conv2d(p, w, None, geom)?;
        let a = s.sigmoid(a);
        s.reshape(a, &[b, c, 1, 1])
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let a = self.gate(s, x)?;
        s.mul(x, a)
    }
}

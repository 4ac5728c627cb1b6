use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};
use crate::tensor::Element;

use super::attention::WindowAttention;
use super::config::BlockConfig;
use super::eca::Eca;
use super::local::LocalBranch;
use super::shuffle::channel_shuffle;

/// Lightweight channel refinement module. The input is split in half along
/// channels: one half goes through window attention, the other through the
/// local branch. The concatenated result is mixed by a 1x1 conv, shuffled
/// and gated by ECA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lcrm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
    pub global: WindowAttention,
    pub local: LocalBranch,
    pub fusion: Conv,
    pub eca: Eca,
}

impl Lcrm {
    pub fn new(name: impl Into<String>, cfg: &BlockConfig) -> Self {
        let name = name.into();
        let (c, h) = (cfg.channels, cfg.half());
        Lcrm {
            global: WindowAttention::new(format!("{name}.global"), h, cfg.window_size, cfg.heads),
            local: LocalBranch::new(format!("{name}.local"), h),
            fusion: Conv::pointwise(format!("{name}.fusion"), c, c),
            eca: Eca::new(format!("{name}.eca"), cfg.eca_kernel),
            groups: cfg.shuffle_groups,
            channels: c,
            name,
        }
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.global.declare(b)?;
        self.local.declare(b)?;
        self.fusion.declare(b)?;
        self.eca.declare(b)
    }

    /// Forward with the two branches supplied by the caller.
    pub fn forward_with<T: Element>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        global: impl FnOnce(&mut Session<'_, T>, Var) -> Result<Var>,
        local: impl FnOnce(&mut Session<'_, T>, Var) -> Result<Var>,
    ) -> Result<Var> {
        let shape = s.shape(x);
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "lcrm",
                format!("`{}` expects [B,{},H,W], got {shape:?}", self.name, self.channels),
            ));
        }
        let h = self.channels / 2;
        let parts = s.split(x, 1, &[h, h])?;
        let g = global(s, parts[0])?;
        let l = local(s, parts[1])?;
        let y = s.concat(&[g, l], 1)?;
        let y = self.fusion.forward(s, y)?;
        let y = channel_shuffle(s, y, self.groups)?;
        self.eca.forward(s, y)
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.forward_with(s, x, |s, v| self.global.forward(s, v), |s, v| self.local.forward(s, v))
    }
}

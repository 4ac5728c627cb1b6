use crate::error::{Error, Result};
use crate::nn::{Activation, NormKind};

/// Kernel sizes used by the spatial selection module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SismKernels {
    /// Depthwise kernel of the mid-range path.
    pub mid: usize,
    /// Depthwise kernel of the long-range path.
    pub long: usize,
    /// Kernel of the 2-channel spatial attention conv.
    pub attn: usize,
    /// Depthwise kernel of the small-receptive-field detail path.
    pub detail: usize,
}

impl Default for SismKernels {
    fn default() -> Self {
        SismKernels { mid: 5, long: 7, attn: 7, detail: 3 }
    }
}

/// Hyperparameters shared by the decoder blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockConfig {
    /// Channel width C of the block input.
    pub channels: usize,
    pub window_size: usize,
    pub heads: usize,
    pub shuffle_groups: usize,
    pub eca_kernel: usize,
    pub sism_kernels: SismKernels,
    pub norm: NormKind,
    pub activation: Activation,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            channels: 64,
            window_size: 8,
            heads: 4,
            shuffle_groups: 2,
            eca_kernel: 3,
            sism_kernels: SismKernels::default(),
            norm: NormKind::Batch,
            activation: Activation::Relu,
        }
    }
}

impl BlockConfig {
    pub fn with_channels(&self, channels: usize) -> Self {
        BlockConfig { channels, ..self.clone() }
    }

    /// Width of each LCRM branch.
    pub fn half(&self) -> usize {
        self.channels / 2
    }

    pub fn head_dim(&self) -> usize {
        self.half() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let bad = |m: String| Err(Error::Config(m));
        if c < 4 || !c.is_multiple_of(4) {
            // The split halves feed a local branch whose two sub-branches
            // each take half of the branch width.
            return bad(format!("channels must be a positive multiple of 4, got {c}"));
        }
        if self.heads == 0 || !self.half().is_multiple_of(self.heads) {
            return bad(format!("channels/2 = {} is not divisible by heads = {}", self.half(), self.heads));
        }
        if self.window_size == 0 {
            return bad("window_size must be positive".into());
        }
        if self.shuffle_groups == 0 || !c.is_multiple_of(self.shuffle_groups) {
            return bad(format!("channels {c} not divisible by shuffle_groups {}", self.shuffle_groups));
        }
        if self.eca_kernel.is_multiple_of(2) {
            return bad(format!("eca_kernel must be odd, got {}", self.eca_kernel));
        }
        let k = self.sism_kernels;
        for (name, v) in [("mid", k.mid), ("long", k.long), ("attn", k.attn), ("detail", k.detail)] {
            if v % 2 == 0 {
                return bad(format!("sism {name} kernel must be odd, got {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        BlockConfig::default().validate().unwrap();
    }

    #[test]
    fn invariants_are_enforced() {
        let base = BlockConfig::default();
        assert!(base.with_channels(66).validate().is_err());
        assert!(BlockConfig { heads: 3, ..base.clone() }.validate().is_err());
        assert!(BlockConfig { eca_kernel: 4, ..base.clone() }.validate().is_err());
        assert!(BlockConfig { shuffle_groups: 3, ..base }.validate().is_err());
    }
}

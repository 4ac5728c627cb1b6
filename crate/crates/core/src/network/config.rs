use crate::blocks::BlockConfig;
use crate::error::{Error, Result};

/// Overall topology of the segmentation network.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DecoderConfig {
    /// Image channels fed to the stub encoder.
    pub in_channels: usize,
    /// Channels of the encoder features at strides 4, 8, 16 and 32.
    pub encoder_channels: [usize; 4],
    /// Single decoder width shared by every stage.
    pub decode_channels: usize,
    pub num_classes: usize,
    /// Block hyperparameters; `block.channels` is replaced by `decode_channels`.
    pub block: BlockConfig,
    pub aux_heads: bool,
}

/// Encoder output strides, shallowest first.
pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            in_channels: 3,
            encoder_channels: [64, 128, 256, 512],
            decode_channels: 64,
            num_classes: 7,
            block: BlockConfig::default(),
            aux_heads: true,
        }
    }
}

impl DecoderConfig {
    pub fn block_config(&self) -> BlockConfig {
        self.block.with_channels(self.decode_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.decode_channels == 0 || !self.decode_channels.is_multiple_of(2) {
            return Err(Error::Config(format!("decode_channels must be even and positive, got {}", self.decode_channels)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be at least 2, got {}", self.num_classes)));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.block_config().validate()
    }
}

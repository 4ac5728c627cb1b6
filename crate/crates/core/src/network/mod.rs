//! Full encoder-decoder network, parameter initialization and checkpoints.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod inspect;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DecoderConfig, STRIDES};
pub use decoder::{Decoder, Head, Output};
pub use encoder::StubEncoder;
pub use inspect::{attention_maps, StageMap};

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{Builder, ParamStore, Session};
use crate::tensor::Element;

/// Parameter-name prefix of every decoder entry.
pub const DECODER_PREFIX: &str = "decoder.";
pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    pub cfg: DecoderConfig,
    pub encoder: StubEncoder,
    pub decoder: Decoder,
}

impl Network {
    pub fn new(cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Network { cfg: cfg.clone(), encoder: StubEncoder::new(cfg), decoder: Decoder::new(cfg) })
    }

    pub fn declare<T: Element>(&self, b: &mut Builder<'_, T>) -> Result<()> {
        self.encoder.declare(b)?;
        self.decoder.declare(b)
    }

    pub fn forward<T: Element>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Output> {
        let shape = s.shape(image).to_vec();
        let feats = self.encoder.forward(s, image)?;
        self.decoder.forward(s, &feats, (shape[2], shape[3]))
    }
}

/// Fresh parameters for `cfg`. Every entry draws from its own stream
/// derived from `seed` and its name.
pub fn init_params<T: Element>(cfg: &DecoderConfig, seed: u64) -> Result<ParamStore<T>> {
    let net = Network::new(cfg)?;
    let mut store = ParamStore::new();
    net.declare(&mut Builder::new(&mut store, seed))?;
    Ok(store)
}

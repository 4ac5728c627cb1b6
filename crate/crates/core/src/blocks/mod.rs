//! Decoder building blocks.

mod attention;
mod cffm;
mod config;
mod eca;
mod lcrm;
mod local;
mod shuffle;
mod sism;

pub use attention::{row_entropy_map, WindowAttention, WindowLayout};
pub use cffm::{gate_weights, Cffm, GateWeights};
pub use config::{BlockConfig, SismKernels};
pub use eca::Eca;
pub use lcrm::Lcrm;
pub use local::LocalBranch;
pub use shuffle::{channel_shuffle, shuffle_source};
pub use sism::{Sism, SismParts};

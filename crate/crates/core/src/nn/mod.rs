//! Parameters, forward sessions and the basic layers the blocks are built from.

pub mod layers;
pub mod params;
pub mod session;

pub use layers::{update_running_stats, Activation, Conv, ConvNormAct, Norm, NormKind};
pub use params::{Builder, Entry, Init, ParamStore, Role};
pub use session::{Mode, Session};

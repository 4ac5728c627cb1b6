//! LightFormer: a lightweight semantic-segmentation decoder built on a small
//! reverse-mode autodiff tensor library, with an analytic cost model and a
//! desk-scale training pipeline.

pub mod autograd;
pub mod efficiency;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod lftr;
pub mod network;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autograd::{AdjointFault, Grads, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};

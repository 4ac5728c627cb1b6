//! Forward and adjoint numeric kernels. These operate on concrete tensors;
//! the [`crate::autograd`] tape composes them.

pub mod conv;
pub mod elementwise;
pub mod layout;
pub mod matmul;
pub mod pool;
pub mod reduce;
pub mod resample;

pub use conv::{conv2d_backward, conv2d_forward, out_extent, Conv2dGeom, Conv2dGrads};
pub use elementwise::{binary, broadcast_shape, expand, reduce_to, sigmoid, unary, Unary};
pub use layout::{concat, inverse_perm, narrow, pad_bottom_right, permute};
pub use matmul::{batched_matmul, matmul_dims, MatmulDims};
pub use pool::{pool2d_backward, pool2d_forward, pool2d_out_hw, PoolGeom, PoolKind};
pub use reduce::{
    argmax_channels, cross_entropy, normalize, reduce_axis, softmax, NormStats, NormView, Reduce,
};
pub use resample::{upsample_bilinear_backward, upsample_bilinear_forward};

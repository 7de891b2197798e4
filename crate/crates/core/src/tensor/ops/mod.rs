//! Forward and adjoint kernels on plain tensors.

mod activation;
mod conv;
mod elementwise;
mod linalg;
mod linear;
mod loss;
mod norm;
mod pool;
mod resize;

pub use activation::{activation, activation_backward, sigmoid_scalar, Activation};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads, Conv2dParams};
pub use elementwise::{
    broadcast_shape, concat_channels, elementwise, reduce_to_shape, scale, BinaryOp,
};
pub use linalg::{matmul, matmul_backward, softmax, softmax_backward, transpose, SoftmaxAxis};
pub use linear::{fully_connected, fully_connected_backward};
pub use loss::{bce, bce_backward, soft_iou, soft_iou_backward, BCE_CLAMP, IOU_SMOOTH};
pub use norm::{
    batch_norm, batch_norm_backward, update_running, BatchNormForward, NormMode, BN_EPS,
    BN_MOMENTUM,
};
pub use pool::{pool, pool_backward, PoolKind};
pub use resize::{resize_bilinear, resize_bilinear_backward, resize_nearest, upsample_bilinear};

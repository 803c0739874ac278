//! Forward numeric kernels over [`Tensor`](crate::Tensor).

pub mod batchnorm;
pub mod conv;
pub mod counters;
pub mod elementwise;
pub mod gemm;
pub mod pool;
pub mod resize;

pub use batchnorm::{batchnorm, BnMode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, fold, unfold};
pub use counters::OpCounts;
pub use elementwise::{add, concat_channels, relu, scale, sigmoid, slice_channels};
pub use gemm::{batched_matmul, matmul, MatRef};
pub use pool::{avgpool2d, maxpool2d};
pub use resize::bilinear_resize;

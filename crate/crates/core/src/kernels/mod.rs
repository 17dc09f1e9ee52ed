//! Forward and backward kernels for every layer the classifier and decoder
//! networks use.
//!
//! Bias convention: depthwise and pointwise kernels carry per-channel biases;
//! standard, pseudo-3D and transposed convolutions are bias-free; batch norm
//! has two trainable values per channel.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod depthwise;
pub mod geometry;
pub mod layers;
pub mod linear;
pub mod loss;
pub mod pool;
pub mod pseudo;

pub use activation::{relu, relu_backward, sigmoid};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_forward_cached, BatchNormState, BnMode};
pub use conv::{
    conv3d_backward, conv3d_forward, convtranspose3d_backward, convtranspose3d_forward, convtranspose_extent, ConvGrads,
    StdKernel,
};
pub use depthwise::{
    depthwise3d_backward, depthwise3d_forward, pointwise_backward, pointwise_forward, BiasedGrads, DepthwiseKernel,
    PointwiseKernel,
};
pub use geometry::{ConvGeometry, Window};
pub use layers::{Layer, Mode, Param};
pub use linear::{fully_connected, fully_connected_backward};
pub use loss::{softmax_cross_entropy, voxel_bce};
pub use pool::{maxpool3d, maxpool3d_backward, maxpool3d_with_indices};
pub use pseudo::{dwsep_block_forward, pseudo3d_forward, PseudoKernelPair};

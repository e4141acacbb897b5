//! Differentiable layer operations. Each forward has a matching `*_backward`
//! that returns the input gradient and accumulates parameter gradients.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod pool;
pub mod reference;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use batchnorm::{
    batchnorm2d, batchnorm2d_backward, batchnorm2d_inference, BatchNormCache, BatchNormState, Mode, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvParams};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndices};

//! Dense NHWC tensors and the differentiable operations the segmentation
//! networks are built from. Every op is a forward function returning its
//! output plus whatever the matching backward function needs.

mod activation;
mod checkpoint;
mod conv;
mod norm;
mod optim;
mod param;
mod resample;
mod tensor;

pub use activation::{
    relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softmax_channels,
    softmax_channels_backward,
};
pub use checkpoint::{Checkpoint, Entry, BLOB_FILE, MANIFEST_FILE};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvCache};
pub use norm::{BatchNorm, BatchNormCache};
pub use optim::Adam;
pub use param::{Buffer, Module, Parameter};
pub use resample::{
    concat_channels, concat_channels_backward, max_pool2, max_pool2_backward, upsample2,
    upsample2_backward, PoolCache,
};
pub use tensor::{Real, Shape4, Tensor4};

/// Whether a forward pass is part of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

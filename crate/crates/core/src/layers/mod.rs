//! Differentiable building blocks: convolution, batch norm, ReLU, MSE.

mod batchnorm;
mod conv;
mod loss;
mod relu;
mod stencil;
mod winograd;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_inference, batchnorm_forward_train,
    BatchNormState, BnCache, BnGrads, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub(crate) use batchnorm::{bn_relu_backward, bn_relu_forward_train};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub(crate) use conv::conv2d_backward_with;
pub use loss::mse_loss;
pub use relu::{relu_backward, relu_forward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Inference,
}

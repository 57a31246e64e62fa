//! Minimal dense-tensor engine with hand-written backward passes for the
//! operators the autoencoders need.

pub mod batchnorm;
pub mod checks;
pub mod checkpoint;
pub mod conv;
mod gemm;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod ops;
mod tensor;

pub use batchnorm::{batchnorm, batchnorm_backward, BnParams, Mode};
pub use conv::{conv2d, conv2d_backward};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layer::{Layer, Sequential};
pub use loss::{mse_loss, softmax, softmax_cce_loss};
pub use ops::{
    dense, dense_backward, maxpool2x2, maxpool2x2_backward, relu, relu_backward, upsample2x,
    upsample2x_backward,
};
pub use tensor::Tensor;

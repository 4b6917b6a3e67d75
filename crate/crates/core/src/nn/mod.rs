//! Neural-network kernels with explicit forward/backward passes.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod pool;

pub use activation::{
    relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, softmax, softmax_backward,
};
pub use adam::{adam_step, AdamConfig, Param};
pub use batchnorm::{
    batchnorm, batchnorm_backward, BatchNormCache, BatchStats, Mode, RunningStats,
};
pub use conv::{conv1d, conv1d_backward, deconv1d, deconv1d_backward, ConvGrads};
pub use dense::{dense, dense_batch, dense_batch_backward, DenseGrads};
pub use dropout::{dropout, dropout_backward};
pub use gradcheck::{
    grad_check, relative_error, Differentiable, GradCheckOptions, GradCheckReport,
};
pub use pool::{maxpool1d, maxpool1d_backward, upsample1d, upsample1d_backward, Pooled};

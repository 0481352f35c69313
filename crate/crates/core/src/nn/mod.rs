//! Layer engine: tensor ops with hand-written backward passes, losses, Adam, and a
//! finite-difference gradient checker.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lrn;
pub mod param;
pub mod pool;

pub use activation::{activation, activation_backward, Activation, ActivationLayer};
pub use adam::{adam_step, OptimizerConfig};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm2d, Mode, RunningStats};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvGrads, Padding};
pub use dense::{dense_backward, dense_forward, dense_param_count, Dense};
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use loss::{loss_mse, loss_softmax_xent};
pub use lrn::{lrn_backward, lrn_forward, Lrn, LrnConfig};
pub use param::{LayerParams, Param};
pub use pool::{maxpool2_backward, maxpool2_forward, pooled_extent, MaxPool2};

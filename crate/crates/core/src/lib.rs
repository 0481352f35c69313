//! Adaptive convolutional networks: convolution filters generated from side information
//! by a small filter manifold network, plus crowd counting and non-blind deconvolution
//! pipelines built on them.

pub mod adaptive;
pub mod catalog;
pub mod checkpoint;
pub mod counting;
pub mod crowd;
pub mod deconv;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod model;
pub mod network;
pub mod nn;
pub mod pgm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};

//! Frequency-specialized dual-CNN image denoiser.
//!
//! A noisy grayscale image is denoised by two networks: one predicts the
//! Gaussian-blurred (low frequency) component of the clean image and the
//! other predicts the remainder (high frequency). Their outputs are summed.
//! A single residual network is included as the baseline.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod frequency;
pub mod layers;
pub mod network;
pub mod plane;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{CheckpointError, Error, ErrorClass, Result};
pub use network::{MappingMode, Network, NetworkSpec};
pub use plane::{ImageGray, Plane};
pub use tensor::{Dims, Real, Tensor4};

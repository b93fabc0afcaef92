//! Engine for 3-D segmentation networks built on large-kernel attention.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense tensors, differentiable primitives, reverse-mode autodiff;
//! * [`blocks`]: the LKA unit, attention module, ConvFF, patch embedding and LKA block;
//! * [`network`]: LKA-E, LKA-ED and the plain-convolution U-Net, plus parameter/FLOP accounting
//!   and the checkpoint container;
//! * [`pipeline`]: volumes on disk, preprocessing, synthetic cases and Gaussian blurring;
//! * [`training`]: Dice + cross-entropy loss, Adam, gradient clipping, the training loop;
//! * [`inference`]: Gaussian-weighted sliding windows and flip test-time augmentation;
//! * [`metrics`]: Dice, HD95, lesion-wise F1, lesion count and volume differences;
//! * [`analysis`]: effective receptive fields and the blur probe;
//! * [`selftest`]: the oracle suites bundled for the command line.

pub mod analysis;
pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod selftest;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Real, Tensor};

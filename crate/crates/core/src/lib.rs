//! Backdrop: stochastic masking of the backward pass.
//!
//! A masking layer is the identity in the forward pass; in the backward pass
//! it keeps each gradient path with probability `1 - p` and rescales the
//! survivors. This crate bundles the pieces needed to train and evaluate
//! networks with such layers:
//!
//! * [`autodiff`]: a small tape-based reverse-mode engine over [`Tensor`]s.
//! * [`backdrop`]: masking layers in batch-axis and spatial-lattice modes.
//! * [`nn`]: convolution, batch norm, pooling, and an architecture builder.
//! * [`losses`]: cross-entropy, the sigmoid rank statistic (a differentiable
//!   ROC-AUC), a class-centroid distance loss, and their masked composite.
//! * [`gp`]: a two-scale Gaussian-process texture generator and its file
//!   format.
//! * [`data`]: dataset readers, class-imbalance truncation and batching.
//! * [`train`]: configuration, SGD, metrics, checkpoints and the training
//!   loop.

pub mod autodiff;
pub mod backdrop;
pub mod data;
pub mod error;
pub mod gp;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{Backward, BackwardCtx, Tape, Var};
pub use backdrop::{effective_batch_size, MaskMode, MaskingLayer, ScalingConvention};
pub use error::{Error, Result};
pub use tensor::Tensor;

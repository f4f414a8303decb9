//! Desk-scale deep-learning engine and experiment harness for volumetric
//! grayscale scans.
//!
//! The crate is organized around a define-by-run reverse-mode autodiff graph
//! ([`tensor::GradGraph`]) over dense `f32` tensors. On top of it sit:
//!
//! - [`ops`]: forward/backward kernels (convolutions, pooling, normalization,
//!   attention, resampling),
//! - [`models`]: the model zoo (residual and inception-style CNN classifiers,
//!   a two-stage slice-sequence transformer, U-Net autoencoders and the
//!   U-Net+MLP hybrid),
//! - [`attribution`]: gradient attribution (saliency, SmoothGrad, guided
//!   backprop, Grad-CAM, guided Grad-CAM) plus overlay rendering and
//!   localization scoring,
//! - [`metrics`]: ROC AUC, accuracy, PSNR and SSIM,
//! - [`data`]: synthetic knee-phantom volumes with ground-truth lesion masks,
//!   augmentation, NPY container I/O and patient-level splits,
//! - [`exp`]: the training/evaluation/grid-search harness with checkpointing
//!   and report generation.
//!
//! With the default `parallel` feature, data-parallel inner loops run on
//! rayon; without it the same loops run sequentially and produce bitwise
//! identical results.

pub mod attribution;
pub mod data;
pub mod error;
pub mod exp;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod ops;
pub(crate) mod par;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradGraph, TapRecord, Tensor, Value};

//! Binary lesion segmentation for retinal fundus images.
//!
//! A small, dependency-light toolkit: NCHW tensors with hand-written forward
//! and backward layer kernels ([`ops`]), a U-Net assembled from them
//! ([`unet`]), paired image/mask loading and augmentation ([`data`]), the
//! Dice + BCE training loop with Adam and plateau scheduling ([`train`]),
//! per-image segmentation metrics and quadratic weighted kappa ([`metrics`]),
//! and a deterministic findings-to-referral report composer ([`report`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod ops;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
pub use unet::{UNetConfig, UNetModel};

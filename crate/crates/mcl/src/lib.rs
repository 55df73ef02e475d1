//! Marginal contrastive correspondence learning on synthetic desk-scale
//! tasks.
//!
//! The crate provides a small reverse-mode gradient tape, contrastive losses
//! (InfoNCE and its additive-angular-margin variant), self-correlation maps,
//! cosine-similarity correspondence with exemplar warping, convolutional
//! feature encoders with an Adam optimizer, and an experiment harness
//! (synthetic datasets, training loop, L1/PSNR/SSIM/top-1 metrics, PGM/PPM
//! and checkpoint I/O) behind the `mcl` CLI.
//!
//! Core math is generic over the scalar type; the aliases below pin the f64
//! instantiation used by the harness and the gradient checks.

pub mod error;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod correspondence;
pub mod dataset;
pub mod encoder;
pub mod gradcheck;
pub mod grid;
pub mod image;
pub mod metrics;
pub mod params;
pub mod scm;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64 tensor, the default precision of the harness.
pub type Tensor = tensor::Tensor<f64>;
/// f64 feature grid.
pub type FeatureGrid = grid::FeatureGrid<f64>;
/// f64 gradient tape.
pub type Tape = tape::Tape<f64>;

//! Video clip expression classification with noise-aware adaptive loss
//! weighting.
//!
//! The pipeline: [`augment`] a clip (frame skipping, shared pixel erasing),
//! embed every frame and run a temporal transformer ([`model`]), average
//! per-frame class probabilities into one clip prediction, score it with
//! the Gaussian-kernel weighted cross-entropy ([`loss`]), and evaluate with
//! macro-F1 ([`metrics`]). [`train`] ties these into an AdamW training loop,
//! a finite-difference gradient checker and an ablation driver; [`data`]
//! generates synthetic clips and reads/writes the clip file format.

// `Real` is f32 or f64 depending on features, so casts to it are not always no-ops.
#![allow(clippy::unnecessary_cast)]

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensors;
pub mod train;

pub use error::{Error, Result};

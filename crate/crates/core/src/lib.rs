//! PRISM: pseudo-label induced subspace modeling for out-of-distribution
//! detection.
//!
//! A classifier head is split into `M` pseudo-label probability blocks.
//! Because each block is (approximately) a column-stochastic mixture of the
//! true class posterior, the stacked blocks live in a `K`-dimensional
//! subspace of `R^{MK}` spanned by the learnable correction matrices'
//! inverses. Training combines the usual cross-entropy objective with a
//! null-space regularizer that pulls in-distribution representations into
//! that subspace; at test time a kNN score over l2-normalized penultimate
//! features separates ID from OOD samples.
//!
//! Module map:
//! - [`numerics`]: matrices, softmax parameterizations, inversion.
//! - [`subspace`]: the stacked basis, its projector, and the reg loss.
//! - [`model`]: encoder, projection head, recombination.
//! - [`training`]: losses, reverse-mode gradients, optimizers, fit loop.
//! - [`detection`]: kNN index, score, and threshold calibration.
//! - [`metrics`]: FPR@TPR, AUROC, accuracy, histograms.
//! - [`data`]: synthetic benchmark generation, fixtures, file formats.
//! - [`rng`]: the seeded SplitMix64 generator behind all randomness.

pub mod data;
pub mod detection;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod subspace;
pub mod training;

pub use error::{Error, Result};

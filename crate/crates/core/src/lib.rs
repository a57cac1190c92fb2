// SPDX-License-Identifier: MIT OR Apache-2.0

//! # rivalry-core
//!
//! Analysis kernels for *feature rivalry*: negatively correlated sparse
//! autoencoder (SAE) features treated as a signal of model uncertainty.
//!
//! The crate is `no_std` (with `alloc`) so the numeric pipeline can be
//! embedded anywhere. Everything operates on in-memory matrices; reading and
//! writing dump files lives in the `rivalry-tools` companion crate.
//!
//! ## Pipeline
//!
//! - [`entropy`]: normalized first-word response entropy and the
//!   ambiguous/unambiguous split.
//! - [`sae`]: SAE encode/decode over residual-stream activations.
//! - [`rivalry`]: population rivalry (5th percentile of pairwise activation
//!   correlations), the per-layer scan with Mann-Whitney testing, rival pair
//!   selection, and the per-prompt decoder-cosine rivalry score.
//! - [`steering`]: rivalry axes, random baseline directions, steering plans
//!   and flip-rate analysis of generation records.
//! - [`evaluate`]: correctness labels, AUROC and calibration comparison.
//! - [`stats`]: the statistical kernels everything above is built on.
//! - [`synth`]: seeded generators with planted ground truth.
//!
//! ## Features
//!
//! - `std` (default): runtime SIMD dispatch for the encoder kernel.
//! - `parallel` (default): rayon parallelism for encoding.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod entropy;
pub mod error;
pub mod evaluate;
mod kernel;
pub mod matrix;
pub mod rivalry;
pub mod sae;
pub mod stats;
pub mod steering;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use sae::{FeatureActivations, SaeParams};

/// Layers carrying SAEs in the reference configuration: every second layer
/// from 0 to 24.
pub const DEFAULT_LAYERS: [usize; 13] = [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24];

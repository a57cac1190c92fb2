// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the analysis kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {name} at index {index}")]
    NonFinite { name: String, index: usize },

    /// Pearson correlation is undefined because one input is constant.
    #[error("correlation undefined: input has zero variance")]
    ZeroVariance,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// AUROC is undefined when only one class is present.
    #[error("labels contain a single class")]
    SingleClass,

    #[error("no features with mean activation above {threshold}")]
    NoActiveFeatures { threshold: f64 },

    #[error("no valid feature pair: {excluded_features} zero-variance features excluded")]
    NoValidPairs { excluded_features: usize },

    #[error("decoder columns of features {a} and {b} coincide; rivalry axis is undefined")]
    ZeroAxis { a: usize, b: usize },

    #[error("feature id {id} out of range for SAE with {features} features")]
    FeatureOutOfRange { id: usize, features: usize },

    #[error("prompt {prompt_id} has no unsteered baseline record")]
    MissingBaseline { prompt_id: String },

    #[error("prompt {prompt_id} has no random-direction record at multiplier {multiplier}")]
    MissingRandom { prompt_id: String, multiplier: f64 },

    #[error("duplicate record for prompt {prompt_id}, vector {vector}, multiplier {multiplier}")]
    DuplicateRecord {
        prompt_id: String,
        vector: String,
        multiplier: f64,
    },

    #[error("planted correlation {target} for features {features:?} is infeasible; achieved {achieved}")]
    InfeasibleCorrelation {
        features: Vec<usize>,
        target: f64,
        achieved: f64,
    },

    #[error("pair id {0} has no matching entry")]
    UnmatchedPair(String),

    #[error("sample lists have inconsistent lengths: expected {expected}, prompt {prompt_id} has {actual}")]
    InconsistentSamples {
        prompt_id: String,
        expected: usize,
        actual: usize,
    },
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a JSON file whose every field is optional, with
//! command-line overrides applied on top.

use std::path::Path;

use rivalry_core::entropy::{FirstWordRule, DEFAULT_HIGH_THRESHOLD, DEFAULT_LOW_THRESHOLD};
use rivalry_core::evaluate::DEFAULT_BIN_COUNT;
use rivalry_core::rivalry::{
    DEFAULT_ACTIVATION_THRESHOLD, DEFAULT_ALPHA, DEFAULT_PAIR_COUNT, DEFAULT_SUBSAMPLE_SIZE, DEFAULT_TOP_N_FEATURES,
};
use rivalry_core::steering::{
    GenerationConfig, OutputComparison, DEFAULT_MULTIPLIERS, DEFAULT_PROMPTS_PER_PAIR, DEFAULT_RANDOM_VECTOR_COUNT,
};
use rivalry_core::synth::{DatasetConfig, RecordSynthConfig, UncertaintySynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::ToolError;

/// Layer the per-prompt score is computed at unless configured otherwise.
pub const DEFAULT_SCORE_LAYER: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub entropy_high_threshold: f64,
    pub entropy_low_threshold: f64,
    pub first_word: FirstWordRule,
    pub activation_threshold: f64,
    pub subsample_size: usize,
    pub alpha: f64,
    pub top_n_features: usize,
    pub pair_count: usize,
    pub multipliers: Vec<f64>,
    pub random_vector_count: usize,
    pub prompts_per_pair: usize,
    pub generation: GenerationConfig,
    pub output_comparison: OutputComparison,
    pub bin_count: usize,
    pub score_layer: usize,
    /// Master seed; feature subsampling, prompt selection, random baselines
    /// and synthetic data derive from it.
    pub seed: u64,
    pub layers: Vec<usize>,
    pub synth_dataset: DatasetConfig,
    pub synth_records: RecordSynthConfig,
    pub synth_uncertainty: UncertaintySynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            entropy_high_threshold: DEFAULT_HIGH_THRESHOLD,
            entropy_low_threshold: DEFAULT_LOW_THRESHOLD,
            first_word: FirstWordRule::default(),
            activation_threshold: DEFAULT_ACTIVATION_THRESHOLD,
            subsample_size: DEFAULT_SUBSAMPLE_SIZE,
            alpha: DEFAULT_ALPHA,
            top_n_features: DEFAULT_TOP_N_FEATURES,
            pair_count: DEFAULT_PAIR_COUNT,
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            random_vector_count: DEFAULT_RANDOM_VECTOR_COUNT,
            prompts_per_pair: DEFAULT_PROMPTS_PER_PAIR,
            generation: GenerationConfig::default(),
            output_comparison: OutputComparison::default(),
            bin_count: DEFAULT_BIN_COUNT,
            score_layer: DEFAULT_SCORE_LAYER,
            seed: 0,
            layers: rivalry_core::DEFAULT_LAYERS.to_vec(),
            synth_dataset: DatasetConfig::default(),
            synth_records: RecordSynthConfig::default(),
            synth_uncertainty: UncertaintySynthConfig::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub layers: Option<Vec<usize>>,
    pub pair_count: Option<usize>,
    pub multipliers: Option<Vec<f64>>,
    pub bin_count: Option<usize>,
    pub score_layer: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ToolError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ToolError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ToolError::Config(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(layers) = &overrides.layers {
            config.layers = layers.clone();
        }
        if let Some(n) = overrides.pair_count {
            config.pair_count = n;
        }
        if let Some(m) = &overrides.multipliers {
            config.multipliers = m.clone();
        }
        if let Some(b) = overrides.bin_count {
            config.bin_count = b;
        }
        if let Some(l) = overrides.score_layer {
            config.score_layer = l;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        let bad = |m: String| Err(ToolError::Config(m));
        if !(0.0..=1.0).contains(&self.entropy_low_threshold)
            || !(0.0..=1.0).contains(&self.entropy_high_threshold)
            || self.entropy_low_threshold > self.entropy_high_threshold
        {
            return bad(format!(
                "entropy thresholds must satisfy 0 <= low <= high <= 1, got {} / {}",
                self.entropy_low_threshold, self.entropy_high_threshold
            ));
        }
        if !(self.activation_threshold >= 0.0 && self.activation_threshold.is_finite()) {
            return bad(format!(
                "activation_threshold must be >= 0, got {}",
                self.activation_threshold
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        for (name, v) in [
            ("subsample_size", self.subsample_size),
            ("top_n_features", self.top_n_features),
            ("pair_count", self.pair_count),
            ("random_vector_count", self.random_vector_count),
            ("prompts_per_pair", self.prompts_per_pair),
            ("bin_count", self.bin_count),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.subsample_size < 2 {
            return bad("subsample_size must be at least 2".into());
        }
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !m.is_finite() || *m == 0.0) {
            return bad("multipliers must be a nonempty list of finite nonzero values".into());
        }
        if self.layers.is_empty() {
            return bad("layer list is empty".into());
        }
        Ok(())
    }

    /// Seed for a named stage, so stages stay independent of each other.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        // FNV-1a over the stage name, mixed with the master seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stage.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

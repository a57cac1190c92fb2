// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rivalry scores.
//!
//! The population score of a layer and condition is the 5th percentile of
//! Pearson correlations between every pair of selected features, computed
//! across the condition's prompts; more negative means stronger rivalry. The
//! layer scan compares the two conditions' full correlation distributions
//! with a Mann-Whitney test.
//!
//! The per-prompt score is the 5th percentile of cosine similarities between
//! the decoder directions of one prompt's most active features.

use alloc::string::String;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sae::{self, FeatureActivations, SaeParams};
use crate::stats::{self, Direction, MannWhitneyResult};

pub const DEFAULT_ACTIVATION_THRESHOLD: f64 = 0.01;
pub const DEFAULT_SUBSAMPLE_SIZE: usize = 300;
pub const DEFAULT_RIVALRY_QUANTILE: f64 = 0.05;
pub const DEFAULT_TOP_N_FEATURES: usize = 50;
pub const DEFAULT_PAIR_COUNT: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Features kept for one layer's correlation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub layer_index: usize,
    /// Ascending feature ids.
    pub selected_feature_ids: Vec<usize>,
    /// Mean activation of each selected feature, aligned with the ids.
    pub mean_activations: Vec<f64>,
    /// Features above threshold before subsampling.
    pub qualifying_count: usize,
    pub threshold: f64,
    pub subsample_size: usize,
    pub seed: u64,
}

/// Keeps features whose mean activation exceeds `threshold`; when more than
/// `subsample_size` qualify, draws a uniform subset. The draw uses a ChaCha8
/// stream keyed by `(seed, layer_index)` so each layer gets its own
/// reproducible subsample.
pub fn select_features(
    f: &FeatureActivations,
    layer_index: usize,
    threshold: f64,
    subsample_size: usize,
    seed: u64,
) -> Result<FeatureSelection> {
    if f.prompts() == 0 || f.features() == 0 {
        return Err(Error::Empty("feature activations"));
    }
    let means = f.mean_activations();
    let qualifying: Vec<usize> = (0..means.len()).filter(|&i| means[i] > threshold).collect();
    if qualifying.is_empty() {
        return Err(Error::NoActiveFeatures { threshold });
    }
    let mut ids = if qualifying.len() > subsample_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(layer_index as u64);
        rand::seq::index::sample(&mut rng, qualifying.len(), subsample_size)
            .into_iter()
            .map(|i| qualifying[i])
            .collect()
    } else {
        qualifying.clone()
    };
    ids.sort_unstable();
    Ok(FeatureSelection {
        layer_index,
        mean_activations: ids.iter().map(|&i| means[i]).collect(),
        selected_feature_ids: ids,
        qualifying_count: qualifying.len(),
        threshold,
        subsample_size,
        seed,
    })
}

/// Pearson correlation of every unordered pair of features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairCorrelations {
    /// `(a, b)` feature ids with `a < b` in selection order.
    pub pairs: Vec<(usize, usize)>,
    /// Correlation of each pair, aligned with `pairs`.
    pub values: Vec<f64>,
    /// Features with zero variance across prompts; none of their pairs are
    /// included.
    pub excluded_features: Vec<usize>,
    pub excluded_pairs: usize,
}

impl PairCorrelations {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pairwise correlations between `features` across the prompts of `f`.
///
/// Each feature column is centered and scaled to unit norm once, after which
/// each correlation is a single dot product.
pub fn pairwise_correlations(f: &FeatureActivations, features: &[usize]) -> Result<PairCorrelations> {
    if f.prompts() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise correlations need at least two prompts".into(),
        ));
    }
    if features.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise correlations need at least two features".into(),
        ));
    }
    if let Some(&id) = features.iter().find(|&&id| id >= f.features()) {
        return Err(Error::FeatureOutOfRange {
            id,
            features: f.features(),
        });
    }

    let n = f.prompts();
    let mut kept: Vec<usize> = Vec::with_capacity(features.len());
    let mut excluded_features = Vec::new();
    let mut unit = Vec::with_capacity(features.len() * n);
    for (id, mut column) in features.iter().copied().zip(f.feature_columns(features)) {
        if stats::is_constant(&column) {
            excluded_features.push(id);
            continue;
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        column.iter_mut().for_each(|v| *v -= mean);
        let norm = libm::sqrt(column.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            excluded_features.push(id);
            continue;
        }
        unit.extend(column.iter().map(|v| v / norm));
        kept.push(id);
    }

    let m = features.len();
    let total_pairs = m * (m - 1) / 2;
    let k = kept.len();
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    let mut values = Vec::with_capacity(pairs.capacity());
    for i in 0..k {
        let zi = &unit[i * n..(i + 1) * n];
        for j in i + 1..k {
            let zj = &unit[j * n..(j + 1) * n];
            let r: f64 = zi.iter().zip(zj).map(|(a, b)| a * b).sum();
            pairs.push((kept[i], kept[j]));
            values.push(r.clamp(-1.0, 1.0));
        }
    }
    if values.is_empty() {
        return Err(Error::NoValidPairs {
            excluded_features: excluded_features.len(),
        });
    }
    let excluded_pairs = total_pairs - values.len();
    Ok(PairCorrelations {
        pairs,
        values,
        excluded_features,
        excluded_pairs,
    })
}

/// 5th percentile of the correlation distribution.
pub fn population_rivalry_score(correlations: &[f64]) -> Result<f64> {
    stats::percentile(correlations, DEFAULT_RIVALRY_QUANTILE)
}

/// Settings shared by every layer of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub activation_threshold: f64,
    pub subsample_size: usize,
    pub seed: u64,
    /// Family-wise significance level; a layer is significant when its
    /// Bonferroni-adjusted p falls below it.
    pub alpha: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            activation_threshold: DEFAULT_ACTIVATION_THRESHOLD,
            subsample_size: DEFAULT_SUBSAMPLE_SIZE,
            seed: 0,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Hidden states of both conditions at one layer, plus that layer's SAE.
#[derive(Debug, Clone, Copy)]
pub struct LayerInput<'a> {
    pub layer: usize,
    /// `None` when no SAE is available; the layer is skipped with a warning.
    pub sae: Option<&'a SaeParams>,
    pub ambiguous: &'a Matrix<f32>,
    pub unambiguous: &'a Matrix<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRivalry {
    pub layer: usize,
    pub rivalry_score_ambiguous: f64,
    pub rivalry_score_unambiguous: f64,
    pub pair_count_ambiguous: usize,
    pub pair_count_unambiguous: usize,
    pub excluded_pairs_ambiguous: usize,
    pub excluded_pairs_unambiguous: usize,
    /// Test of ambiguous (sample `a`) against unambiguous (sample `b`).
    pub mann_whitney: MannWhitneyResult,
    pub p_bonferroni: f64,
    /// The ambiguous correlation distribution sits lower.
    pub direction_correct: bool,
    pub significant: bool,
    pub selection: FeatureSelection,
}

impl LayerRivalry {
    /// `R_unambiguous − R_ambiguous`; positive when ambiguous prompts rival more.
    pub fn rivalry_gap(&self) -> f64 {
        self.rivalry_score_unambiguous - self.rivalry_score_ambiguous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LayerOutcome {
    Scanned(LayerRivalry),
    Skipped { layer: usize, warning: String },
}

impl LayerOutcome {
    pub fn layer(&self) -> usize {
        match self {
            LayerOutcome::Scanned(r) => r.layer,
            LayerOutcome::Skipped { layer, .. } => *layer,
        }
    }

    pub fn scanned(&self) -> Option<&LayerRivalry> {
        match self {
            LayerOutcome::Scanned(r) => Some(r),
            LayerOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalryReport {
    pub config: ScanConfig,
    /// Multiplier used for the Bonferroni adjustment.
    pub bonferroni_factor: usize,
    pub layers: Vec<LayerOutcome>,
}

impl RivalryReport {
    pub fn scanned(&self) -> impl Iterator<Item = &LayerRivalry> {
        self.layers.iter().filter_map(LayerOutcome::scanned)
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerRivalry> {
        self.scanned().find(|r| r.layer == layer)
    }

    pub fn significant_layers(&self) -> Vec<usize> {
        self.scanned().filter(|r| r.significant).map(|r| r.layer).collect()
    }
}

/// Correlations of one condition's prompts over a fixed feature selection.
pub fn condition_correlations(
    hidden: &Matrix<f32>,
    sae: &SaeParams,
    selection: &FeatureSelection,
) -> Result<PairCorrelations> {
    let f = sae::encode(hidden, sae)?;
    pairwise_correlations(&f, &selection.selected_feature_ids)
}

/// Rivalry analysis of one layer, without multiple-comparison adjustment
/// (`p_bonferroni` equals the raw p).
///
/// Features are selected once on the union of both conditions' prompts so
/// both correlation distributions range over the same feature pairs.
pub fn scan_layer(
    layer: usize,
    sae: &SaeParams,
    ambiguous: &Matrix<f32>,
    unambiguous: &Matrix<f32>,
    config: &ScanConfig,
) -> Result<LayerRivalry> {
    let amb = sae::encode(ambiguous, sae)?;
    let unamb = sae::encode(unambiguous, sae)?;
    let union = FeatureActivations::new(amb.values().vstack(unamb.values())?)?;
    let selection = select_features(
        &union,
        layer,
        config.activation_threshold,
        config.subsample_size,
        config.seed,
    )?;
    drop(union);

    let corr_amb = pairwise_correlations(&amb, &selection.selected_feature_ids)?;
    let corr_unamb = pairwise_correlations(&unamb, &selection.selected_feature_ids)?;
    let mw = stats::mann_whitney(&corr_amb.values, &corr_unamb.values)?;
    let direction_correct = mw.direction == Direction::ALower;
    Ok(LayerRivalry {
        layer,
        rivalry_score_ambiguous: population_rivalry_score(&corr_amb.values)?,
        rivalry_score_unambiguous: population_rivalry_score(&corr_unamb.values)?,
        pair_count_ambiguous: corr_amb.len(),
        pair_count_unambiguous: corr_unamb.len(),
        excluded_pairs_ambiguous: corr_amb.excluded_pairs,
        excluded_pairs_unambiguous: corr_unamb.excluded_pairs,
        p_bonferroni: mw.p_value_two_sided,
        significant: mw.p_value_two_sided < config.alpha,
        mann_whitney: mw,
        direction_correct,
        selection,
    })
}

/// Scans every layer and applies a Bonferroni adjustment with factor equal
/// to the number of layers actually scanned.
pub fn layer_scan(inputs: &[LayerInput<'_>], config: &ScanConfig) -> Result<RivalryReport> {
    if inputs.is_empty() {
        return Err(Error::Empty("layer scan inputs"));
    }
    let mut layers = Vec::with_capacity(inputs.len());
    for input in inputs {
        let outcome = match input.sae {
            Some(sae) => LayerOutcome::Scanned(scan_layer(
                input.layer,
                sae,
                input.ambiguous,
                input.unambiguous,
                config,
            )?),
            None => LayerOutcome::Skipped {
                layer: input.layer,
                warning: alloc::format!("no SAE parameters for layer {}", input.layer),
            },
        };
        layers.push(outcome);
    }
    let factor = layers.iter().filter(|l| l.scanned().is_some()).count();
    for outcome in &mut layers {
        if let LayerOutcome::Scanned(r) = outcome {
            r.p_bonferroni = stats::bonferroni(r.mann_whitney.p_value_two_sided, factor);
            r.significant = r.p_bonferroni < config.alpha;
        }
    }
    Ok(RivalryReport {
        config: config.clone(),
        bonferroni_factor: factor,
        layers,
    })
}

/// Layer with the largest `R_unambiguous − R_ambiguous`; ties go to the
/// lower layer index.
pub fn select_peak_layer(report: &RivalryReport) -> Result<usize> {
    report
        .scanned()
        .fold(None::<(usize, f64)>, |best, r| {
            let gap = r.rivalry_gap();
            match best {
                Some((layer, g)) if g > gap || (g == gap && layer < r.layer) => Some((layer, g)),
                _ => Some((r.layer, gap)),
            }
        })
        .map(|(layer, _)| layer)
        .ok_or(Error::Empty("rivalry report has no scanned layers"))
}

/// A negatively correlated feature pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RivalPair {
    pub feature_a: usize,
    pub feature_b: usize,
    pub correlation: f64,
}

impl RivalPair {
    /// Stable identifier, `"<a>-<b>"`.
    pub fn pair_id(&self) -> String {
        alloc::format!("{}-{}", self.feature_a, self.feature_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRivalPairs {
    pub pairs: Vec<RivalPair>,
    pub requested: usize,
    /// Set when fewer than `requested` negative pairs exist.
    pub warning: Option<String>,
}

/// The `count` most negative correlations, ascending. Ties are broken by
/// feature ids so the result is deterministic.
pub fn top_rival_pairs(correlations: &PairCorrelations, count: usize) -> Result<TopRivalPairs> {
    if count == 0 {
        return Err(Error::InvalidArgument("rival pair count must be at least 1".into()));
    }
    let mut negative: Vec<RivalPair> = correlations
        .pairs
        .iter()
        .zip(&correlations.values)
        .filter(|(_, &r)| r < 0.0)
        .map(|(&(a, b), &r)| RivalPair {
            feature_a: a,
            feature_b: b,
            correlation: r,
        })
        .collect();
    negative.sort_by(|x, y| {
        x.correlation
            .total_cmp(&y.correlation)
            .then((x.feature_a, x.feature_b).cmp(&(y.feature_a, y.feature_b)))
    });
    let warning = (negative.len() < count).then(|| {
        alloc::format!(
            "only {} negatively correlated pairs available, {} requested",
            negative.len(),
            count
        )
    });
    negative.truncate(count);
    Ok(TopRivalPairs {
        pairs: negative,
        requested: count,
        warning,
    })
}

/// Per-prompt rivalry of one hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRivalry {
    /// `None` when fewer than two usable features are active.
    pub score: Option<f64>,
    /// Features above the activation floor before truncation to `top_n`.
    pub active_features: usize,
    /// Features whose decoder directions entered the score, most active first.
    pub features_used: Vec<usize>,
}

/// Encodes `h`, keeps features with activation above `activation_floor`
/// (largest first, at most `top_n`), and returns the 5th percentile of the
/// pairwise cosine similarities of their decoder columns.
pub fn per_prompt_rivalry_score(
    h: &[f32],
    sae: &SaeParams,
    top_n: usize,
    activation_floor: f64,
) -> Result<PromptRivalry> {
    let activations = sae::encode_one(h, sae)?;
    prompt_rivalry_from_activations(&activations, sae, top_n, activation_floor)
}

/// Batched [`per_prompt_rivalry_score`] over the rows of `hidden`.
pub fn per_prompt_rivalry_scores(
    hidden: &Matrix<f32>,
    sae: &SaeParams,
    top_n: usize,
    activation_floor: f64,
) -> Result<Vec<PromptRivalry>> {
    let f = sae::encode(hidden, sae)?;
    (0..f.prompts())
        .map(|p| prompt_rivalry_from_activations(f.values().row(p), sae, top_n, activation_floor))
        .collect()
}

/// Scores one prompt from already-encoded activations. Features with an
/// all-zero decoder column carry no direction and are skipped.
pub fn prompt_rivalry_from_activations(
    activations: &[f64],
    sae: &SaeParams,
    top_n: usize,
    activation_floor: f64,
) -> Result<PromptRivalry> {
    if activations.len() != sae.features() {
        return Err(Error::DimensionMismatch {
            context: "activation width",
            expected: sae.features(),
            actual: activations.len(),
        });
    }
    let mut active: Vec<usize> = (0..activations.len())
        .filter(|&i| activations[i] > activation_floor)
        .collect();
    let active_features = active.len();
    active.sort_by(|&a, &b| activations[b].total_cmp(&activations[a]).then(a.cmp(&b)));

    let mut features_used = Vec::new();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for &id in &active {
        if directions.len() == top_n {
            break;
        }
        let mut column = sae.decoder_column(id)?;
        let norm = libm::sqrt(column.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        column.iter_mut().for_each(|v| *v /= norm);
        directions.push(column);
        features_used.push(id);
    }

    if directions.len() < 2 {
        return Ok(PromptRivalry {
            score: None,
            active_features,
            features_used,
        });
    }
    let mut cosines = Vec::with_capacity(directions.len() * (directions.len() - 1) / 2);
    for i in 0..directions.len() {
        for j in i + 1..directions.len() {
            let c: f64 = directions[i].iter().zip(&directions[j]).map(|(a, b)| a * b).sum();
            cosines.push(c.clamp(-1.0, 1.0));
        }
    }
    Ok(PromptRivalry {
        score: Some(stats::percentile(&cosines, DEFAULT_RIVALRY_QUANTILE)?),
        active_features,
        features_used,
    })
}

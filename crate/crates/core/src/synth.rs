// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded generators with known ground truth: planted anticorrelated
//! features, bimodal response-entropy populations, generation and
//! uncertainty records, and a full multi-layer dataset that drives the CLI
//! pipeline without a model.
//!
//! Every generator is a pure function of its configuration and seed.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::entropy::Condition;
use crate::error::{Error, Result};
use crate::evaluate::UncertaintyRecord;
use crate::matrix::Matrix;
use crate::sae::{FeatureActivations, SaeParams};
use crate::stats;
use crate::steering::{GenerationRecord, PlanEntry};

/// Planted features sit this many standard deviations above zero before
/// rectification, so clipping is rare and the target correlation survives.
const PLANT_OFFSET: f64 = 3.0;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// A set of features with a common pairwise correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub features: Vec<usize>,
    /// Must lie in `[−1/(len − 1), 0)`.
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedRivalryConfig {
    pub prompt_count: usize,
    pub feature_count: usize,
    /// `(feature_i, feature_j, target_correlation)`.
    pub planted_pairs: Vec<(usize, usize, f64)>,
    /// Larger competing sets; a pair is the two-member case.
    pub planted_groups: Vec<PlantedGroup>,
    /// Typical activation magnitude.
    pub noise_scale: f64,
    /// Fraction of zero activations in unplanted features.
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for PlantedRivalryConfig {
    fn default() -> Self {
        Self {
            prompt_count: 200,
            feature_count: 300,
            planted_pairs: Vec::new(),
            planted_groups: Vec::new(),
            noise_scale: 1.0,
            sparsity: 0.5,
            seed: 0,
        }
    }
}

impl PlantedRivalryConfig {
    fn groups(&self) -> Vec<PlantedGroup> {
        self.planted_pairs
            .iter()
            .map(|&(a, b, r)| PlantedGroup {
                features: vec![a, b],
                correlation: r,
            })
            .chain(self.planted_groups.iter().cloned())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.prompt_count < 3 || self.feature_count < 2 {
            return invalid(format!(
                "need at least 3 prompts and 2 features, got {}x{}",
                self.prompt_count, self.feature_count
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return invalid(format!("noise_scale must be positive, got {}", self.noise_scale));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return invalid(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        let mut used = BTreeSet::new();
        for g in self.groups() {
            let k = g.features.len();
            if k < 2 {
                return invalid("planted groups need at least two features".into());
            }
            if k >= self.prompt_count {
                return invalid(format!("planted group of {k} needs more than {k} prompts"));
            }
            let floor = -1.0 / (k as f64 - 1.0);
            if !(g.correlation < 0.0 && g.correlation > -1.0 && g.correlation >= floor) {
                return invalid(format!(
                    "target correlation {} for {k} features must lie in [{floor}, 0) and above -1",
                    g.correlation
                ));
            }
            for &f in &g.features {
                if f >= self.feature_count {
                    return Err(Error::FeatureOutOfRange {
                        id: f,
                        features: self.feature_count,
                    });
                }
                if !used.insert(f) {
                    return invalid(format!("feature {f} is planted more than once"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievedCorrelation {
    pub features: Vec<usize>,
    pub target: f64,
    /// Mean empirical Pearson correlation over the group's pairs.
    pub achieved: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRivalry {
    pub activations: FeatureActivations,
    pub achieved: Vec<AchievedCorrelation>,
}

/// Centered, mutually orthogonal columns of unit sample variance.
fn orthonormal_columns(n: usize, k: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| normal(r)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>() / n as f64);
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Nonnegative activations with planted negative correlations.
///
/// Each planted group is built from orthogonal Gaussian columns mixed by the
/// square root of its equicorrelation matrix, so before rectification the
/// sample correlations equal the target exactly. A shared factor enters the
/// two members of a pair with opposite signs. Columns are then shifted well
/// above zero and rectified, which leaves them active on every prompt.
/// Unplanted features are independent rectified draws, zero on roughly
/// `sparsity` of prompts.
pub fn gen_planted_rivalry(config: &PlantedRivalryConfig) -> Result<PlantedRivalry> {
    config.validate()?;
    let (n, k) = (config.prompt_count, config.feature_count);
    let mut values = Matrix::zeros(n, k);
    let mut r = rng(config.seed, 0);
    let scales: Vec<f64> = (0..k)
        .map(|_| config.noise_scale * libm::exp(0.25 * normal(&mut r)))
        .collect();

    let groups = config.groups();
    let planted: BTreeSet<usize> = groups.iter().flat_map(|g| g.features.iter().copied()).collect();
    for j in (0..k).filter(|j| !planted.contains(j)) {
        for i in 0..n {
            let active = r.random::<f64>() >= config.sparsity;
            let v = if active {
                scales[j] * (0.1 + libm::fabs(normal(&mut r)))
            } else {
                0.0
            };
            values.set(i, j, v);
        }
    }

    let mut achieved = Vec::with_capacity(groups.len());
    for g in &groups {
        let m = g.features.len();
        let rho = g.correlation;
        let basis = orthonormal_columns(n, m, &mut r);
        // symmetric square root of (1 − ρ)I + ρ11ᵀ
        let along = libm::sqrt((1.0 + (m as f64 - 1.0) * rho).max(0.0));
        let across = libm::sqrt(1.0 - rho);
        let mean_col: Vec<f64> = (0..n)
            .map(|i| basis.iter().map(|b| b[i]).sum::<f64>() / m as f64)
            .collect();
        for (idx, &f) in g.features.iter().enumerate() {
            for i in 0..n {
                let latent = across * (basis[idx][i] - mean_col[i]) + along * mean_col[i];
                values.set(i, f, (scales[f] * (PLANT_OFFSET + latent)).max(0.0));
            }
        }
        let columns: Vec<Vec<f64>> = g.features.iter().map(|&f| values.column(f)).collect();
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..m {
            for b in a + 1..m {
                sum += stats::pearson(&columns[a], &columns[b])?;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        if n >= 200 && libm::fabs(mean - rho) > 0.1 {
            return Err(Error::InfeasibleCorrelation {
                features: g.features.clone(),
                target: rho,
                achieved: mean,
            });
        }
        achieved.push(AchievedCorrelation {
            features: g.features.clone(),
            target: rho,
            achieved: mean,
        });
    }
    Ok(PlantedRivalry {
        activations: FeatureActivations::new(values)?,
        achieved,
    })
}

/// An SAE whose encoder is the identity, so `encode(h) = ReLU(h)` and
/// nonnegative activations pass through unchanged. Decoder columns are
/// random unit vectors.
pub fn identity_sae(dim: usize, layer_index: usize, seed: u64) -> Result<SaeParams> {
    let mut w_enc = Matrix::zeros(dim, dim);
    for i in 0..dim {
        w_enc.set(i, i, 1.0f32);
    }
    let mut r = rng(seed, 1 + layer_index as u64);
    let mut w_dec = Matrix::zeros(dim, dim);
    for j in 0..dim {
        let col: Vec<f64> = (0..dim).map(|_| normal(&mut r)).collect();
        let norm = libm::sqrt(col.iter().map(|x| x * x).sum::<f64>());
        for (i, v) in col.iter().enumerate() {
            w_dec.set(i, j, (v / norm) as f32);
        }
    }
    SaeParams::new(
        layer_index,
        format!("synthetic_identity_{dim}"),
        w_enc,
        vec![0.0; dim],
        w_dec,
        vec![0.0; dim],
    )
}

const SYLLABLES: [&str; 12] = [
    "ka", "lo", "mi", "ren", "tas", "vo", "du", "shi", "bel", "or", "quin", "ze",
];

/// Distinct pronounceable word for every index below 12³.
fn word(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut w = String::new();
    for s in [i / (n * n) % n, i / n % n, i % n] {
        w.push_str(SYLLABLES[s]);
    }
    let mut chars = w.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => w,
    }
}

const VOCABULARY: usize = 12 * 12 * 12;
pub const COMPLETIONS_PER_PROMPT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalPrompt {
    pub prompt_id: String,
    pub completions: Vec<String>,
    /// True if completions were drawn from the spread-out mode.
    pub high_entropy: bool,
}

/// Prompts whose 20 sampled completions either all start with the same word
/// or start with words drawn uniformly from a large vocabulary. Exactly
/// `count / 2` prompts (rounded down) are high-entropy, in seeded order.
pub fn gen_bimodal_entropy_population(count: usize, seed: u64) -> Result<Vec<BimodalPrompt>> {
    if count == 0 {
        return Err(Error::InvalidArgument("population needs at least one prompt".into()));
    }
    let mut r = rng(seed, 0);
    let mut modes: Vec<bool> = (0..count).map(|i| i < count / 2).collect();
    // Fisher-Yates
    for i in (1..count).rev() {
        let j = r.random_range(0..=i);
        modes.swap(i, j);
    }
    Ok(modes
        .into_iter()
        .enumerate()
        .map(|(i, high)| {
            let fixed = word(r.random_range(0..VOCABULARY));
            let completions = (0..COMPLETIONS_PER_PROMPT)
                .map(|_| {
                    let w = if high {
                        word(r.random_range(0..VOCABULARY))
                    } else {
                        fixed.clone()
                    };
                    format!("{w}, I believe.")
                })
                .collect();
            BimodalPrompt {
                prompt_id: format!("q{i:05}"),
                completions,
                high_entropy: high,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordSynthConfig {
    /// Probability a rivalry-axis run changes the output.
    pub rivalry_flip_rate: f64,
    /// Probability a random-direction run changes the output.
    pub random_flip_rate: f64,
    pub seed: u64,
}

impl Default for RecordSynthConfig {
    fn default() -> Self {
        Self {
            rivalry_flip_rate: 0.20,
            random_flip_rate: 0.14,
            seed: 0,
        }
    }
}

/// Stand-in for a model runner: one record per plan entry. Unsteered runs
/// answer `"Answer <prompt>"`; steered runs change that answer with the
/// configured probability.
pub fn gen_generation_records(entries: &[PlanEntry], config: &RecordSynthConfig) -> Result<Vec<GenerationRecord>> {
    for p in [config.rivalry_flip_rate, config.random_flip_rate] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("flip rate {p} outside [0, 1]")));
        }
    }
    let mut r = rng(config.seed, 0);
    Ok(entries
        .iter()
        .map(|e| {
            let base = format!("Answer {}", e.prompt_id);
            let rate = if e.multiplier == 0.0 {
                0.0
            } else if e.pair_id == crate::steering::BASELINE_VECTOR_ID {
                config.random_flip_rate
            } else {
                config.rivalry_flip_rate
            };
            let flipped = r.random::<f64>() < rate;
            GenerationRecord {
                prompt_id: e.prompt_id.clone(),
                pair_id: e.pair_id.clone(),
                multiplier: e.multiplier,
                output_text: if flipped {
                    format!("Steered {} x{} {}", e.pair_id, e.multiplier, e.prompt_id)
                } else {
                    base
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintySynthConfig {
    pub record_count: usize,
    pub rivalry_auroc: f64,
    pub softmax_auroc: f64,
    /// Accuracy on unambiguous and ambiguous prompts.
    pub accuracy_unambiguous: f64,
    pub accuracy_ambiguous: f64,
    pub seed: u64,
}

impl Default for UncertaintySynthConfig {
    fn default() -> Self {
        Self {
            record_count: 400,
            rivalry_auroc: 0.69,
            softmax_auroc: 0.81,
            accuracy_unambiguous: 0.75,
            accuracy_ambiguous: 0.35,
            seed: 0,
        }
    }
}

/// How close generated scores land to a requested AUROC.
pub const AUROC_TUNING_TOLERANCE: f64 = 0.003;

/// Inverse standard normal CDF by bisection on `erfc`.
fn probit(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 0.5 * libm::erfc(-mid / core::f64::consts::SQRT_2) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Scores whose AUROC against `labels` lies within
/// [`AUROC_TUNING_TOLERANCE`] of `target`: a Gaussian location shift sized
/// for the target, then swaps of positive/negative scores that move the
/// AUROC toward it.
fn tuned_scores(labels: &[bool], target: f64, r: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let shift = core::f64::consts::SQRT_2 * probit(target);
    let mut scores: Vec<f64> = labels
        .iter()
        .map(|&l| normal(r) + if l { shift } else { 0.0 })
        .collect();
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut current = stats::auroc(labels, &scores)?;
    for _ in 0..100_000 {
        if libm::fabs(current - target) <= AUROC_TUNING_TOLERANCE {
            break;
        }
        let p = positives[r.random_range(0..positives.len())];
        let q = negatives[r.random_range(0..negatives.len())];
        let helps = if current < target {
            scores[p] < scores[q]
        } else {
            scores[p] > scores[q]
        };
        if !helps {
            continue;
        }
        scores.swap(p, q);
        let next = stats::auroc(labels, &scores)?;
        if libm::fabs(next - target) < libm::fabs(current - target) {
            current = next;
        } else {
            scores.swap(p, q);
        }
    }
    Ok(scores)
}

/// Records whose rivalry and softmax signals predict correctness with
/// roughly the requested AUROCs. Half the prompts are ambiguous.
pub fn gen_uncertainty_records(config: &UncertaintySynthConfig) -> Result<Vec<UncertaintyRecord>> {
    for t in [config.rivalry_auroc, config.softmax_auroc] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!("target AUROC {t} outside (0, 1)")));
        }
    }
    for a in [config.accuracy_ambiguous, config.accuracy_unambiguous] {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidArgument(format!("accuracy {a} outside [0, 1]")));
        }
    }
    let n = config.record_count;
    let mut r = rng(config.seed, 0);
    let conditions: Vec<Condition> = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Condition::Ambiguous
            } else {
                Condition::Unambiguous
            }
        })
        .collect();
    let mut labels: Vec<bool> = conditions
        .iter()
        .map(|c| {
            let acc = if *c == Condition::Ambiguous {
                config.accuracy_ambiguous
            } else {
                config.accuracy_unambiguous
            };
            r.random::<f64>() < acc
        })
        .collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        if n < 2 {
            return Err(Error::SingleClass);
        }
        labels[0] = !labels[0];
    }
    let rivalry = tuned_scores(&labels, config.rivalry_auroc, &mut r)?;
    let softmax = tuned_scores(&labels, config.softmax_auroc, &mut r)?;
    Ok((0..n)
        .map(|i| UncertaintyRecord {
            prompt_id: format!("q{i:05}"),
            rivalry_score: Some(libm::tanh(0.25 * rivalry[i] - 0.3)),
            softmax_confidence: 1.0 / (1.0 + libm::exp(-(softmax[i] - 0.5))),
            correct: labels[i],
            condition: conditions[i],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Half ambiguous, half unambiguous.
    pub prompt_count: usize,
    /// Hidden width; the identity SAE has as many features.
    pub hidden_dim: usize,
    pub layers: Vec<usize>,
    /// Layers whose ambiguous prompts carry planted competing groups.
    pub planted_layers: Vec<usize>,
    pub group_size: usize,
    pub noise_scale: f64,
    pub sparsity: f64,
    pub accuracy_unambiguous: f64,
    pub accuracy_ambiguous: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            prompt_count: 400,
            hidden_dim: 256,
            layers: crate::DEFAULT_LAYERS.to_vec(),
            planted_layers: vec![0, 12],
            group_size: 10,
            noise_scale: 1.0,
            sparsity: 0.5,
            accuracy_unambiguous: 0.75,
            accuracy_ambiguous: 0.35,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPrompt {
    pub prompt_id: String,
    pub text: String,
    pub ground_truth_answers: Vec<String>,
    pub sampled_first_words: Vec<String>,
    pub generated_output: String,
    pub top_token_probability: f64,
    pub intended_condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLayer {
    pub layer: usize,
    pub sae: SaeParams,
    /// `[prompt_count, hidden_dim]`, rows in prompt order.
    pub hidden: Matrix<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub prompts: Vec<SyntheticPrompt>,
    pub layers: Vec<SyntheticLayer>,
}

/// A complete model-free input set: prompts with sampled completions from
/// the bimodal population, per-layer hidden states, and identity SAEs.
/// Ambiguous prompts at `planted_layers` have their features partitioned
/// into maximally competing groups.
pub fn gen_dataset(config: &DatasetConfig) -> Result<SyntheticDataset> {
    if config.layers.is_empty() {
        return Err(Error::Empty("dataset layers"));
    }
    if let Some(l) = config.planted_layers.iter().find(|l| !config.layers.contains(l)) {
        return Err(Error::InvalidArgument(format!(
            "planted layer {l} is not among the dataset layers"
        )));
    }
    if config.group_size < 2 || config.group_size > config.hidden_dim {
        return Err(Error::InvalidArgument(format!(
            "group size {} must lie in [2, hidden_dim]",
            config.group_size
        )));
    }
    let population = gen_bimodal_entropy_population(config.prompt_count, config.seed)?;
    let mut r = rng(config.seed, 1);
    let prompts: Vec<SyntheticPrompt> = population
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let condition = if p.high_entropy {
                Condition::Ambiguous
            } else {
                Condition::Unambiguous
            };
            let acc = if p.high_entropy {
                config.accuracy_ambiguous
            } else {
                config.accuracy_unambiguous
            };
            let correct = r.random::<f64>() < acc;
            let truth = word(i % VOCABULARY);
            let generated_output = if correct {
                format!("The answer is {truth}.")
            } else {
                format!("It might be {}.", word((i + 1) % VOCABULARY))
            };
            let logit = normal(&mut r) + if correct { 1.0 } else { -0.5 };
            SyntheticPrompt {
                text: format!("Question {i}: what is the name in record {}?", p.prompt_id),
                prompt_id: p.prompt_id,
                ground_truth_answers: vec![truth],
                sampled_first_words: p.completions,
                generated_output,
                top_token_probability: 1.0 / (1.0 + libm::exp(-logit)),
                intended_condition: condition,
            }
        })
        .collect();

    let ambiguous_rows: Vec<usize> = (0..prompts.len())
        .filter(|&i| prompts[i].intended_condition == Condition::Ambiguous)
        .collect();
    let unambiguous_rows: Vec<usize> = (0..prompts.len())
        .filter(|&i| prompts[i].intended_condition == Condition::Unambiguous)
        .collect();
    let d = config.hidden_dim;
    let groups: Vec<PlantedGroup> = (0..d / config.group_size)
        .map(|g| PlantedGroup {
            features: (g * config.group_size..(g + 1) * config.group_size).collect(),
            correlation: -1.0 / (config.group_size as f64 - 1.0),
        })
        .collect();

    let mut layers = Vec::with_capacity(config.layers.len());
    for &layer in &config.layers {
        let mut hidden = Matrix::zeros(prompts.len(), d);
        for (c, rows) in [(0u64, &ambiguous_rows), (1, &unambiguous_rows)] {
            if rows.is_empty() {
                continue;
            }
            let planted = c == 0 && config.planted_layers.contains(&layer);
            let block = gen_planted_rivalry(&PlantedRivalryConfig {
                prompt_count: rows.len().max(3),
                feature_count: d,
                planted_pairs: Vec::new(),
                planted_groups: if planted { groups.clone() } else { Vec::new() },
                noise_scale: config.noise_scale,
                sparsity: config.sparsity,
                seed: config
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((layer as u64) << 1 | c),
            })?;
            for (k, &row) in rows.iter().enumerate() {
                for (j, v) in block.activations.values().row(k).iter().enumerate() {
                    hidden.set(row, j, *v as f32);
                }
            }
        }
        layers.push(SyntheticLayer {
            layer,
            sae: identity_sae(d, layer, config.seed)?,
            hidden,
        });
    }
    Ok(SyntheticDataset { prompts, layers })
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering plans along rivalry axes and flip-rate analysis of the
//! generations a model runner returns for them.
//!
//! A plan is self-contained: the runner adds `multiplier × vector` to the
//! residual stream at the last token position of the plan's layer and
//! records the output. The analysis side only ever sees
//! [`GenerationRecord`]s, so everything here is testable without a model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rivalry::RivalPair;
use crate::sae::SaeParams;

pub const DEFAULT_MULTIPLIERS: [f64; 3] = [5.0, 10.0, 20.0];
pub const DEFAULT_RANDOM_VECTOR_COUNT: usize = 10;
pub const DEFAULT_PROMPTS_PER_PAIR: usize = 50;
/// `pair_id` of records steered along the random baseline direction.
pub const BASELINE_VECTOR_ID: &str = "baseline_vector";
/// `pair_id` of unsteered (multiplier 0) records.
pub const UNSTEERED_ID: &str = "unsteered";
pub const INJECTION_SITE: &str = "last_token";

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if !norm.is_finite() || norm <= 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// `(W_dec[:, a] − W_dec[:, b]) / ‖W_dec[:, a] − W_dec[:, b]‖`.
pub fn rivalry_axis(sae: &SaeParams, feature_a: usize, feature_b: usize) -> Result<Vec<f64>> {
    if feature_a == feature_b {
        return Err(Error::ZeroAxis {
            a: feature_a,
            b: feature_b,
        });
    }
    let a = sae.decoder_column(feature_a)?;
    let b = sae.decoder_column(feature_b)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    unit(diff).ok_or(Error::ZeroAxis {
        a: feature_a,
        b: feature_b,
    })
}

/// A random steering direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDirection {
    pub vector: Vec<f64>,
    /// Seed that produced `vector`; differs from the requested seed only if
    /// the mean direction had to be redrawn.
    pub seed_used: u64,
    pub resamples: u32,
}

/// Normalized mean of `count` directions drawn uniformly from the unit
/// sphere (isotropic Gaussian, normalized).
pub fn baseline_vector(dim: usize, count: usize, seed: u64) -> Result<BaselineDirection> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "baseline vector dimension must be positive".into(),
        ));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("baseline vector needs at least one draw".into()));
    }
    let mut seed_used = seed;
    for resamples in 0..u32::MAX {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_used);
        let mut mean = alloc::vec![0.0f64; dim];
        for _ in 0..count {
            let draw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Some(u) = unit(draw) {
                mean.iter_mut().zip(&u).for_each(|(m, x)| *m += x);
            }
        }
        if let Some(vector) = unit(mean) {
            return Ok(BaselineDirection {
                vector,
                seed_used,
                resamples,
            });
        }
        seed_used = seed_used.wrapping_add(1);
    }
    unreachable!("a Gaussian mean direction is nonzero with probability one")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    /// 0 requests greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 16,
            temperature: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub multipliers: Vec<f64>,
    pub random_vector_count: usize,
    pub random_seed: u64,
    pub generation: GenerationConfig,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            random_vector_count: DEFAULT_RANDOM_VECTOR_COUNT,
            random_seed: 0,
            generation: GenerationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPair {
    pub pair_id: String,
    pub feature_a: usize,
    pub feature_b: usize,
    pub correlation: f64,
    /// Stored at the precision the runner injects with.
    pub rivalry_axis: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub layer_index: usize,
    pub pairs: Vec<PlanPair>,
    pub baseline_vector: Vec<f32>,
    pub baseline_seed: u64,
    pub baseline_resamples: u32,
    pub multipliers: Vec<f64>,
    pub injection_site: String,
    pub prompt_ids: Vec<String>,
    pub generation_config: GenerationConfig,
}

/// One generation the runner must perform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub prompt_id: String,
    /// A rival pair id, [`BASELINE_VECTOR_ID`] or [`UNSTEERED_ID`].
    pub pair_id: String,
    pub multiplier: f64,
}

impl SteeringPlan {
    /// Every run the plan requires: one unsteered run per prompt, one per
    /// (pair, multiplier, prompt), and one random-direction run per
    /// (multiplier, prompt).
    pub fn entries(&self) -> Vec<PlanEntry> {
        let mut out = Vec::with_capacity(self.prompt_ids.len() * (1 + (self.pairs.len() + 1) * self.multipliers.len()));
        let entry = |prompt: &String, pair: &str, multiplier: f64| PlanEntry {
            prompt_id: prompt.clone(),
            pair_id: pair.to_string(),
            multiplier,
        };
        for prompt in &self.prompt_ids {
            out.push(entry(prompt, UNSTEERED_ID, 0.0));
        }
        for pair in &self.pairs {
            for &m in &self.multipliers {
                for prompt in &self.prompt_ids {
                    out.push(entry(prompt, &pair.pair_id, m));
                }
            }
        }
        for &m in &self.multipliers {
            for prompt in &self.prompt_ids {
                out.push(entry(prompt, BASELINE_VECTOR_ID, m));
            }
        }
        out
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Builds a plan steering `prompt_ids` along each pair's rivalry axis and
/// along one shared random baseline direction.
pub fn build_plan(
    pairs: &[RivalPair],
    sae: &SaeParams,
    layer_index: usize,
    prompt_ids: Vec<String>,
    config: &PlanConfig,
) -> Result<SteeringPlan> {
    if pairs.is_empty() {
        return Err(Error::Empty("rival pairs"));
    }
    if prompt_ids.is_empty() {
        return Err(Error::Empty("steering prompts"));
    }
    if config.multipliers.is_empty() {
        return Err(Error::Empty("steering multipliers"));
    }
    if config.multipliers.iter().any(|m| !m.is_finite() || *m == 0.0) {
        return Err(Error::InvalidArgument(
            "steering multipliers must be finite and nonzero".into(),
        ));
    }
    let unique: BTreeSet<&String> = prompt_ids.iter().collect();
    if unique.len() != prompt_ids.len() {
        return Err(Error::InvalidArgument("duplicate prompt id in steering plan".into()));
    }
    let plan_pairs = pairs
        .iter()
        .map(|p| {
            Ok(PlanPair {
                pair_id: p.pair_id(),
                feature_a: p.feature_a,
                feature_b: p.feature_b,
                correlation: p.correlation,
                rivalry_axis: to_f32(rivalry_axis(sae, p.feature_a, p.feature_b)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = baseline_vector(sae.hidden_dim(), config.random_vector_count, config.random_seed)?;
    Ok(SteeringPlan {
        layer_index,
        pairs: plan_pairs,
        baseline_vector: to_f32(baseline.vector),
        baseline_seed: baseline.seed_used,
        baseline_resamples: baseline.resamples,
        multipliers: config.multipliers.clone(),
        injection_site: INJECTION_SITE.to_string(),
        prompt_ids,
        generation_config: config.generation.clone(),
    })
}

/// Up to `count` prompt ids drawn without replacement, keeping their input
/// order. All ids are returned when there are no more than `count`.
pub fn sample_prompt_ids(ids: &[String], count: usize, seed: u64) -> Vec<String> {
    if ids.len() <= count {
        return ids.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, ids.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i].clone()).collect()
}

/// Output of one plan entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub pair_id: String,
    /// 0 for the unsteered baseline.
    pub multiplier: f64,
    pub output_text: String,
}

/// When two outputs count as the same.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputComparison {
    /// Equal after trimming and collapsing internal whitespace runs.
    #[default]
    WhitespaceNormalized,
    Exact,
}

impl OutputComparison {
    pub fn same(self, a: &str, b: &str) -> bool {
        match self {
            OutputComparison::Exact => a == b,
            OutputComparison::WhitespaceNormalized => a.split_whitespace().eq(b.split_whitespace()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRateRow {
    pub pair_id: String,
    pub multiplier: f64,
    pub flip_rate_rivalry: f64,
    pub flip_rate_random: f64,
    pub gap: f64,
    pub prompt_count: usize,
    pub flips_rivalry: usize,
    pub flips_random: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSummary {
    pub multiplier: f64,
    pub pair_count: usize,
    pub mean_flip_rate_rivalry: f64,
    pub mean_flip_rate_random: f64,
    pub mean_gap: f64,
    /// Pairs whose rivalry axis flips strictly more outputs than random.
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRateTable {
    /// Sorted by `(pair_id, multiplier)`.
    pub rows: Vec<FlipRateRow>,
    pub summary: Vec<MultiplierSummary>,
}

/// Multiplier as an ordered map key.
#[derive(Debug, Clone, Copy)]
struct Mult(f64);
impl PartialEq for Mult {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Mult {}
impl PartialOrd for Mult {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Mult {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Fraction of prompts whose steered output differs from the unsteered one,
/// per (pair, multiplier), against the random direction on the same prompts.
///
/// Records may arrive in any order. Every multiplier-0 record is an
/// unsteered baseline; when a prompt has several, the one whose `pair_id` is
/// [`UNSTEERED_ID`] wins, otherwise the smallest `pair_id`.
pub fn flip_rate_analysis(records: &[GenerationRecord], comparison: OutputComparison) -> Result<FlipRateTable> {
    let mut seen = BTreeSet::new();
    let mut baselines: BTreeMap<&str, (&str, &str)> = BTreeMap::new();
    // pair -> multiplier -> prompt -> output
    let mut steered: BTreeMap<&str, BTreeMap<Mult, BTreeMap<&str, &str>>> = BTreeMap::new();
    for r in records {
        if !r.multiplier.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "non-finite multiplier for prompt {}",
                r.prompt_id
            )));
        }
        if !seen.insert((r.prompt_id.as_str(), r.pair_id.as_str(), Mult(r.multiplier))) {
            return Err(Error::DuplicateRecord {
                prompt_id: r.prompt_id.clone(),
                vector: r.pair_id.clone(),
                multiplier: r.multiplier,
            });
        }
        if r.multiplier == 0.0 {
            let candidate = (r.pair_id.as_str(), r.output_text.as_str());
            baselines
                .entry(r.prompt_id.as_str())
                .and_modify(|cur| {
                    let rank = |id: &str| (id != UNSTEERED_ID, String::from(id));
                    if rank(candidate.0) < rank(cur.0) {
                        *cur = candidate;
                    }
                })
                .or_insert(candidate);
        } else {
            steered
                .entry(r.pair_id.as_str())
                .or_default()
                .entry(Mult(r.multiplier))
                .or_default()
                .insert(r.prompt_id.as_str(), r.output_text.as_str());
        }
    }

    let flipped = |prompt: &str, output: &str| -> Result<bool> {
        let (_, base) = baselines.get(prompt).ok_or_else(|| Error::MissingBaseline {
            prompt_id: prompt.to_string(),
        })?;
        Ok(!comparison.same(base, output))
    };

    let empty = BTreeMap::new();
    let random = steered.get(BASELINE_VECTOR_ID).unwrap_or(&empty);
    // Every random-direction record needs a baseline too.
    for by_prompt in random.values() {
        for (prompt, out) in by_prompt {
            flipped(prompt, out)?;
        }
    }

    let mut rows = Vec::new();
    for (&pair_id, by_mult) in &steered {
        if pair_id == BASELINE_VECTOR_ID {
            continue;
        }
        for (&Mult(multiplier), by_prompt) in by_mult {
            let random_here = random.get(&Mult(multiplier));
            let (mut flips, mut random_flips) = (0i64, 0i64);
            for (&prompt, &out) in by_prompt {
                flips += i64::from(flipped(prompt, out)?);
                let random_out = random_here
                    .and_then(|m| m.get(prompt))
                    .ok_or_else(|| Error::MissingRandom {
                        prompt_id: prompt.to_string(),
                        multiplier,
                    })?;
                random_flips += i64::from(flipped(prompt, random_out)?);
            }
            let n = by_prompt.len() as f64;
            rows.push(FlipRateRow {
                pair_id: pair_id.to_string(),
                multiplier,
                flip_rate_rivalry: flips as f64 / n,
                flip_rate_random: random_flips as f64 / n,
                gap: (flips - random_flips) as f64 / n,
                prompt_count: by_prompt.len(),
                flips_rivalry: flips as usize,
                flips_random: random_flips as usize,
            });
        }
    }
    rows.sort_by(|a, b| a.pair_id.cmp(&b.pair_id).then(a.multiplier.total_cmp(&b.multiplier)));
    let summary = summarize(&rows);
    Ok(FlipRateTable { rows, summary })
}

fn summarize(rows: &[FlipRateRow]) -> Vec<MultiplierSummary> {
    let mut by_mult: BTreeMap<Mult, Vec<&FlipRateRow>> = BTreeMap::new();
    for row in rows {
        by_mult.entry(Mult(row.multiplier)).or_default().push(row);
    }
    by_mult
        .into_iter()
        .map(|(Mult(multiplier), rows)| {
            let n = rows.len() as f64;
            let mean = |f: fn(&FlipRateRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            // With a common prompt count the means are ratios of integer
            // totals, which avoids accumulating rounding error.
            let common = rows.iter().all(|r| r.prompt_count == rows[0].prompt_count);
            let (rivalry, random, gap) = if common {
                let total = (rows[0].prompt_count * rows.len()) as f64;
                let fr: usize = rows.iter().map(|r| r.flips_rivalry).sum();
                let fb: usize = rows.iter().map(|r| r.flips_random).sum();
                (fr as f64 / total, fb as f64 / total, (fr as f64 - fb as f64) / total)
            } else {
                (
                    mean(|r| r.flip_rate_rivalry),
                    mean(|r| r.flip_rate_random),
                    mean(|r| r.gap),
                )
            };
            MultiplierSummary {
                multiplier,
                pair_count: rows.len(),
                mean_flip_rate_rivalry: rivalry,
                mean_flip_rate_random: random,
                mean_gap: gap,
                wins: rows.iter().filter(|r| r.gap > 0.0).count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStrengthRow {
    pub pair_id: String,
    pub multiplier: f64,
    pub correlation: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCount {
    pub multiplier: f64,
    pub wins: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapVsStrength {
    /// Sorted by `(pair_id, multiplier)`.
    pub rows: Vec<GapStrengthRow>,
    pub win_counts: Vec<WinCount>,
}

/// Joins flip-rate gaps with each pair's correlation, and counts per
/// multiplier the pairs with a positive gap.
pub fn gap_vs_strength(table: &FlipRateTable, pairs: &[RivalPair]) -> Result<GapVsStrength> {
    let strength: BTreeMap<String, f64> = pairs.iter().map(|p| (p.pair_id(), p.correlation)).collect();
    let mut rows = table
        .rows
        .iter()
        .map(|r| {
            let correlation = *strength
                .get(&r.pair_id)
                .ok_or_else(|| Error::UnmatchedPair(r.pair_id.clone()))?;
            Ok(GapStrengthRow {
                pair_id: r.pair_id.clone(),
                multiplier: r.multiplier,
                correlation,
                gap: r.gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.pair_id.cmp(&b.pair_id).then(a.multiplier.total_cmp(&b.multiplier)));

    let mut counts: BTreeMap<Mult, (usize, usize)> = BTreeMap::new();
    for r in &rows {
        let c = counts.entry(Mult(r.multiplier)).or_default();
        c.1 += 1;
        if r.gap > 0.0 {
            c.0 += 1;
        }
    }
    Ok(GapVsStrength {
        rows,
        win_counts: counts
            .into_iter()
            .map(|(Mult(multiplier), (wins, pairs))| WinCount {
                multiplier,
                wins,
                pairs,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use alloc::format;
    use alloc::vec;

    fn sae_with_columns(columns: &[Vec<f32>]) -> SaeParams {
        let (k, d) = (columns.len(), columns[0].len());
        let mut w_dec = Matrix::zeros(d, k);
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                w_dec.set(i, j, v);
            }
        }
        SaeParams::new(0, "", Matrix::zeros(k, d), vec![0.0; k], w_dec, vec![0.0; d]).unwrap()
    }

    #[test]
    fn axis_examples() {
        let s = sae_with_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let axis = rivalry_axis(&s, 0, 1).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((axis[0] - h).abs() < 1e-15 && (axis[1] + h).abs() < 1e-15);
        let back = rivalry_axis(&s, 1, 0).unwrap();
        assert_eq!(back, axis.iter().map(|v| -v).collect::<Vec<_>>());

        let s = sae_with_columns(&[vec![1.0, 2.0, 0.0], vec![0.0, 2.0, 1.0]]);
        let axis = rivalry_axis(&s, 0, 1).unwrap();
        assert!((axis[0] - h).abs() < 1e-15);
        assert_eq!(axis[1], 0.0);
        assert!((axis[2] + h).abs() < 1e-15);
    }

    #[test]
    fn axis_errors() {
        let s = sae_with_columns(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(rivalry_axis(&s, 0, 1), Err(Error::ZeroAxis { a: 0, b: 1 }));
        assert_eq!(rivalry_axis(&s, 0, 0), Err(Error::ZeroAxis { a: 0, b: 0 }));
        assert!(matches!(rivalry_axis(&s, 0, 5), Err(Error::FeatureOutOfRange { .. })));
    }

    #[test]
    fn baseline_examples() {
        let one = baseline_vector(16, 1, 3).unwrap();
        let norm: f64 = one.vector.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(one.seed_used, 3);
        assert_eq!(baseline_vector(16, 10, 3).unwrap(), baseline_vector(16, 10, 3).unwrap());
        assert_ne!(baseline_vector(16, 10, 3).unwrap(), baseline_vector(16, 10, 4).unwrap());
        assert!(baseline_vector(0, 10, 3).is_err());
        assert!(baseline_vector(4, 0, 3).is_err());
    }

    fn pairs(n: usize) -> Vec<RivalPair> {
        (0..n)
            .map(|i| RivalPair {
                feature_a: 2 * i,
                feature_b: 2 * i + 1,
                correlation: -0.5 - i as f64 * 0.01,
            })
            .collect()
    }

    #[test]
    fn plan_entry_counts() {
        let cols: Vec<Vec<f32>> = (0..40)
            .map(|j| (0..8).map(|i| ((i * 7 + j * 3) % 5) as f32 - 2.0).collect())
            .collect();
        let s = sae_with_columns(&cols);
        let prompts: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        let plan = build_plan(&pairs(20), &s, 10, prompts, &PlanConfig::default()).unwrap();
        let entries = plan.entries();
        assert_eq!(entries.len(), 20 * 3 * 50 + 50 + 3 * 50);
        assert_eq!(entries.iter().filter(|e| e.multiplier == 0.0).count(), 50);
        assert_eq!(entries.iter().filter(|e| e.pair_id == BASELINE_VECTOR_ID).count(), 150);
        assert_eq!(plan.injection_site, "last_token");
        assert_eq!(plan.multipliers, vec![5.0, 10.0, 20.0]);
        for p in &plan.pairs {
            let n: f64 = p.rivalry_axis.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prompt_sampling() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        assert_eq!(sample_prompt_ids(&ids, 20, 1), ids);
        let a = sample_prompt_ids(&ids, 4, 1);
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_prompt_ids(&ids, 4, 1));
    }

    #[test]
    fn plan_preconditions() {
        let s = sae_with_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let one = vec![RivalPair {
            feature_a: 0,
            feature_b: 1,
            correlation: -0.4,
        }];
        assert!(build_plan(&one, &s, 0, vec![], &PlanConfig::default()).is_err());
        assert!(build_plan(&[], &s, 0, vec!["a".into()], &PlanConfig::default()).is_err());
        let out_of_range = vec![RivalPair {
            feature_a: 0,
            feature_b: 9,
            correlation: -0.4,
        }];
        assert!(matches!(
            build_plan(&out_of_range, &s, 0, vec!["a".into()], &PlanConfig::default()),
            Err(Error::FeatureOutOfRange { .. })
        ));
    }

    fn rec(prompt: usize, pair: &str, m: f64, out: &str) -> GenerationRecord {
        GenerationRecord {
            prompt_id: format!("p{prompt:02}"),
            pair_id: pair.into(),
            multiplier: m,
            output_text: out.into(),
        }
    }

    /// 50 prompts; `rivalry_flips` steered outputs and `random_flips` random
    /// outputs differ from baseline.
    fn record_set(pair: &str, rivalry_flips: usize, random_flips: usize) -> Vec<GenerationRecord> {
        let mut out = Vec::new();
        for p in 0..50 {
            out.push(rec(p, UNSTEERED_ID, 0.0, "base answer"));
            out.push(rec(
                p,
                pair,
                5.0,
                if p < rivalry_flips { "other" } else { "base  answer " },
            ));
            out.push(rec(
                p,
                BASELINE_VECTOR_ID,
                5.0,
                if p < random_flips { "noise" } else { "base answer" },
            ));
        }
        out
    }

    #[test]
    fn flip_rate_counts() {
        let t = flip_rate_analysis(&record_set("1-2", 10, 0), OutputComparison::default()).unwrap();
        assert_eq!(t.rows[0].flip_rate_rivalry, 0.20);
        let t = flip_rate_analysis(&record_set("1-2", 0, 0), OutputComparison::default()).unwrap();
        assert_eq!(t.rows[0].flip_rate_rivalry, 0.0);
        let t = flip_rate_analysis(&record_set("1-2", 10, 7), OutputComparison::default()).unwrap();
        assert_eq!(t.rows[0].flip_rate_random, 0.14);
        assert_eq!(t.rows[0].gap, 0.06);
        assert_eq!(t.rows[0].prompt_count, 50);
        // exact comparison sees the extra whitespace as a flip
        let t = flip_rate_analysis(&record_set("1-2", 10, 7), OutputComparison::Exact).unwrap();
        assert_eq!(t.rows[0].flip_rate_rivalry, 1.0);
    }

    #[test]
    fn flip_rate_order_invariant() {
        let mut records = record_set("1-2", 13, 4);
        records.extend(record_set("3-4", 2, 4).into_iter().filter(|r| r.pair_id == "3-4"));
        let a = flip_rate_analysis(&records, OutputComparison::default()).unwrap();
        records.reverse();
        records.rotate_left(17);
        assert_eq!(a, flip_rate_analysis(&records, OutputComparison::default()).unwrap());
        assert_eq!(a.summary[0].wins, 1);
        assert_eq!(a.summary[0].pair_count, 2);
    }

    #[test]
    fn flip_rate_errors() {
        let mut records = record_set("1-2", 3, 1);
        records.retain(|r| !(r.prompt_id == "p07" && r.multiplier == 0.0));
        assert_eq!(
            flip_rate_analysis(&records, OutputComparison::default()),
            Err(Error::MissingBaseline {
                prompt_id: "p07".into()
            })
        );
        let mut records = record_set("1-2", 3, 1);
        records.push(records[1].clone());
        assert!(matches!(
            flip_rate_analysis(&records, OutputComparison::default()),
            Err(Error::DuplicateRecord { .. })
        ));
        let mut records = record_set("1-2", 3, 1);
        records.retain(|r| !(r.prompt_id == "p03" && r.pair_id == BASELINE_VECTOR_ID));
        assert!(matches!(
            flip_rate_analysis(&records, OutputComparison::default()),
            Err(Error::MissingRandom { .. })
        ));
    }

    #[test]
    fn gap_strength_join() {
        let t = flip_rate_analysis(&record_set("10740-2786", 18, 10), OutputComparison::default()).unwrap();
        let pair = RivalPair {
            feature_a: 10740,
            feature_b: 2786,
            correlation: -0.6,
        };
        let g = gap_vs_strength(&t, &[pair]).unwrap();
        assert_eq!(g.rows.len(), 1);
        assert_eq!(g.rows[0].gap, 0.16);
        assert_eq!(g.rows[0].correlation, -0.6);
        assert_eq!(g.win_counts[0].wins, 1);

        let zero = flip_rate_analysis(&record_set("1-2", 5, 5), OutputComparison::default()).unwrap();
        let p = RivalPair {
            feature_a: 1,
            feature_b: 2,
            correlation: -0.3,
        };
        assert_eq!(gap_vs_strength(&zero, &[p]).unwrap().win_counts[0].wins, 0);
        assert_eq!(gap_vs_strength(&zero, &[]), Err(Error::UnmatchedPair("1-2".into())));
    }
}

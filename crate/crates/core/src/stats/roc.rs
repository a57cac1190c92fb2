// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(labels: &[bool], scores: &[f64]) -> Result<(u64, u64)> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            context: "labels vs scores",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    Ok((positives, negatives))
}

/// Indices of `scores` sorted ascending, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[idx] => g.push(idx),
            _ => groups.push(alloc::vec![idx]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// credited one half.
///
/// Counts are kept as integers (`2 * wins + ties`) so the result is the same
/// float a brute-force pair count produces.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (positives, negatives) = check_inputs(labels, scores)?;
    let mut doubled: u64 = 0;
    let mut negatives_below: u64 = 0;
    for group in tie_groups(scores) {
        let pos = group.iter().filter(|&&i| labels[i]).count() as u64;
        let neg = group.len() as u64 - pos;
        doubled += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
    }
    Ok(doubled as f64 / (2 * positives * negatives) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive. JSON has no infinity, so
    /// the opening point's threshold is written as the string `"inf"`.
    #[serde(with = "threshold_repr")]
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
}

mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(alloc::string::String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(other) => Err(serde::de::Error::invalid_value(
                serde::de::Unexpected::Str(&other),
                &"a number, \"inf\" or \"-inf\"",
            )),
        }
    }
}

/// ROC curve from the strictest threshold down; starts at `(0, 0)` with an
/// infinite threshold and ends at `(1, 1)`.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let (positives, negatives) = check_inputs(labels, scores)?;
    let mut points = alloc::vec![RocPoint {
        threshold: f64::INFINITY,
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for group in tie_groups(scores).into_iter().rev() {
        for &i in &group {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint {
            threshold: scores[group[0]],
            false_positive_rate: fp as f64 / negatives as f64,
            true_positive_rate: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_score: Option<f64>,
    /// Fraction of positive labels; `None` for empty bins.
    pub accuracy: Option<f64>,
}

/// Equal-width bins over the observed score range. The last bin is closed on
/// the right so the maximum score is counted.
pub fn calibration_bins(labels: &[bool], scores: &[f64], bin_count: usize) -> Result<Vec<CalibrationBin>> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            context: "labels vs scores",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("calibration input"));
    }
    if bin_count == 0 {
        return Err(Error::InvalidArgument("bin_count must be positive".into()));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bin_count as f64;

    let mut sums = alloc::vec![(0usize, 0.0f64, 0usize); bin_count];
    for (&label, &score) in labels.iter().zip(scores) {
        let bin = if width > 0.0 {
            (libm::floor((score - min) / width) as usize).min(bin_count - 1)
        } else {
            0
        };
        let slot = &mut sums[bin];
        slot.0 += 1;
        slot.1 += score;
        slot.2 += usize::from(label);
    }

    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, score_sum, hits))| CalibrationBin {
            lower: min + width * i as f64,
            upper: if i + 1 == bin_count {
                max
            } else {
                min + width * (i + 1) as f64
            },
            count,
            mean_score: (count > 0).then(|| score_sum / count as f64),
            accuracy: (count > 0).then(|| hits as f64 / count as f64),
        })
        .collect())
}

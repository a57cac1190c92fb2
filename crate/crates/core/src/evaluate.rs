// SPDX-License-Identifier: MIT OR Apache-2.0

//! Correctness labels and the comparison of per-prompt rivalry against
//! softmax confidence as predictors of a correct answer.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::entropy::Condition;
use crate::error::{Error, Result};
use crate::stats::{auroc, calibration_bins, roc_curve, CalibrationBin, RocPoint};

pub const DEFAULT_BIN_COUNT: usize = 10;

fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// True iff some ground truth occurs in `output`, ignoring case and
/// differences in whitespace. Blank ground truths never match.
pub fn label_correct<S: AsRef<str>>(output: &str, ground_truths: &[S]) -> bool {
    let output = normalize(output);
    ground_truths.iter().any(|t| {
        let t = normalize(t.as_ref());
        !t.is_empty() && output.contains(t.as_str())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub prompt_id: String,
    /// `None` when too few features were active to score the prompt.
    pub rivalry_score: Option<f64>,
    pub softmax_confidence: f64,
    pub correct: bool,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalComparison {
    pub record_count: usize,
    /// Records without a rivalry score; left out of both signals.
    pub excluded_count: usize,
    pub auroc_rivalry: f64,
    pub auroc_softmax: f64,
    pub calibration_rivalry: Vec<CalibrationBin>,
    pub calibration_softmax: Vec<CalibrationBin>,
    pub roc_rivalry: Vec<RocPoint>,
    pub roc_softmax: Vec<RocPoint>,
}

/// AUROC, ROC points and calibration bins for both signals, computed over
/// the same records.
pub fn compare_signals(records: &[UncertaintyRecord], bin_count: usize) -> Result<SignalComparison> {
    for r in records {
        let finite = r.softmax_confidence.is_finite() && r.rivalry_score.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::NonFinite {
                name: alloc::format!("uncertainty record {}", r.prompt_id),
                index: 0,
            });
        }
    }
    // Canonical order so floating sums inside the bins do not depend on the
    // order records arrived in.
    let mut kept: Vec<&UncertaintyRecord> = records.iter().filter(|r| r.rivalry_score.is_some()).collect();
    kept.sort_by(|a, b| {
        a.prompt_id
            .cmp(&b.prompt_id)
            .then(a.rivalry_score.unwrap().total_cmp(&b.rivalry_score.unwrap()))
            .then(a.softmax_confidence.total_cmp(&b.softmax_confidence))
            .then(a.correct.cmp(&b.correct))
    });
    let labels: Vec<bool> = kept.iter().map(|r| r.correct).collect();
    let rivalry: Vec<f64> = kept.iter().map(|r| r.rivalry_score.unwrap()).collect();
    let softmax: Vec<f64> = kept.iter().map(|r| r.softmax_confidence).collect();
    Ok(SignalComparison {
        record_count: records.len(),
        excluded_count: records.len() - kept.len(),
        auroc_rivalry: auroc(&labels, &rivalry)?,
        auroc_softmax: auroc(&labels, &softmax)?,
        calibration_rivalry: calibration_bins(&labels, &rivalry, bin_count)?,
        calibration_softmax: calibration_bins(&labels, &softmax, bin_count)?,
        roc_rivalry: roc_curve(&labels, &rivalry)?,
        roc_softmax: roc_curve(&labels, &softmax)?,
    })
}

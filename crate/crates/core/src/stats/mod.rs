// SPDX-License-Identifier: MIT OR Apache-2.0

//! Statistical kernels shared by the analysis modules.
//!
//! Every routine here is validated against a naive oracle in the test suite:
//! pair counting for AUROC, double loops for correlation, exhaustive
//! permutation for Mann-Whitney at small sample sizes.

mod mann_whitney;
mod roc;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use mann_whitney::{mann_whitney, Direction, MannWhitneyResult};
pub use roc::{auroc, calibration_bins, roc_curve, CalibrationBin, RocPoint};

/// Sample Pearson correlation of `x` and `y`, clamped to `[-1, 1]`.
///
/// Returns [`Error::ZeroVariance`] when either input is constant; callers
/// decide whether that pair is dropped or reported.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson inputs",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two observations".into()));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::ZeroVariance);
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

pub(crate) fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Percentile with linear interpolation between order statistics at
/// position `q * (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

/// [`percentile`] over input already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(alloc::format!(
            "percentile fraction {q} outside [0, 1]"
        )));
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if frac == 0.0 || a == b {
        return Ok(a);
    }
    Ok(a + (b - a) * frac)
}

/// Shannon entropy of a label distribution divided by `ln n`, where `n` is
/// the total number of samples. Natural log; `0 ln 0 = 0`.
pub fn normalized_entropy(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "normalized entropy needs at least two samples, got {n}"
        )));
    }
    let total = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            // p ln(1/p) keeps a single category at +0
            let p = c as f64 / total;
            p * libm::log(total / c as f64)
        })
        .sum();
    Ok((h / libm::log(total)).clamp(0.0, 1.0))
}

/// [`normalized_entropy`] over the multiset of `labels`.
pub fn normalized_entropy_of<T: Ord>(labels: &[T]) -> Result<f64> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for label in labels {
        *counts.entry(label).or_default() += 1;
    }
    let counts: Vec<usize> = counts.into_values().collect();
    normalized_entropy(&counts)
}

/// Bonferroni adjustment of a p-value for `tests` comparisons.
pub fn bonferroni(p: f64, tests: usize) -> f64 {
    (p * tests.max(1) as f64).min(1.0)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sample sits stochastically lower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ALower,
    BLower,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// Rank-sum U of sample `a`: the number of `(a, b)` pairs with `a > b`,
    /// ties counted one half.
    pub u_statistic: f64,
    /// Signed, continuity-corrected standard score of `u_statistic`.
    pub z_score: f64,
    pub p_value_two_sided: f64,
    pub n1: usize,
    pub n2: usize,
    pub direction: Direction,
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
///
/// Midranks for ties, tie-corrected variance, continuity correction of one
/// half, normal approximation. When every value in both samples is equal the
/// test is degenerate and reports `p = 1` with no direction.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitneyResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mann-whitney sample"));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;

    let mut pooled: Vec<(f64, bool)> = Vec::with_capacity(n);
    pooled.extend(a.iter().map(|&v| (v, true)));
    pooled.extend(b.iter().map(|&v| (v, false)));
    pooled.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));

    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        // ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let in_a = pooled[i..j].iter().filter(|p| p.1).count();
        rank_sum_a += midrank * in_a as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_a - f1 * (f1 + 1.0) / 2.0;
    let mean = f1 * f2 / 2.0;
    let variance = if n > 1 {
        f1 * f2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))
    } else {
        0.0
    };

    if variance <= 0.0 {
        return Ok(MannWhitneyResult {
            u_statistic: u,
            z_score: 0.0,
            p_value_two_sided: 1.0,
            n1,
            n2,
            direction: Direction::None,
        });
    }

    let sd = libm::sqrt(variance);
    let deviation = u - mean;
    let corrected = (libm::fabs(deviation) - 0.5).max(0.0);
    let z = libm::copysign(corrected / sd, deviation);
    let p = libm::erfc(corrected / sd / core::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0);
    let direction = if deviation < 0.0 {
        Direction::ALower
    } else if deviation > 0.0 {
        Direction::BLower
    } else {
        Direction::None
    };

    Ok(MannWhitneyResult {
        u_statistic: u,
        z_score: z,
        p_value_two_sided: p,
        n1,
        n2,
        direction,
    })
}

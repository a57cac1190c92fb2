// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sparse autoencoder parameters and the ReLU encode / affine decode pair.
//!
//! Parameters are stored as f32 (the dump format); all arithmetic runs in
//! f64.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel;
use crate::matrix::Matrix;

/// Parameters of one layer's SAE.
///
/// `w_enc` is `features × hidden_dim`; `w_dec` is `hidden_dim × features`,
/// so column `j` of `w_dec` is feature `j`'s direction in the residual stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    pub layer_index: usize,
    /// Free-form checkpoint description, e.g. width and L0 variant.
    pub checkpoint_tag: String,
    w_enc: Matrix<f32>,
    b_enc: Vec<f32>,
    w_dec: Matrix<f32>,
    b_dec: Vec<f32>,
}

impl SaeParams {
    pub fn new(
        layer_index: usize,
        checkpoint_tag: impl Into<String>,
        w_enc: Matrix<f32>,
        b_enc: Vec<f32>,
        w_dec: Matrix<f32>,
        b_dec: Vec<f32>,
    ) -> Result<Self> {
        let (features, dim) = (w_enc.rows(), w_enc.cols());
        let dims = [
            ("b_enc length", features, b_enc.len()),
            ("W_dec rows", dim, w_dec.rows()),
            ("W_dec columns", features, w_dec.cols()),
            ("b_dec length", dim, b_dec.len()),
        ];
        for (context, expected, actual) in dims {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        let tensors: [(&str, &[f32]); 4] = [
            ("W_enc", w_enc.as_slice()),
            ("b_enc", &b_enc),
            ("W_dec", w_dec.as_slice()),
            ("b_dec", &b_dec),
        ];
        for (name, values) in tensors {
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    name: name.into(),
                    index,
                });
            }
        }
        Ok(Self {
            layer_index,
            checkpoint_tag: checkpoint_tag.into(),
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        })
    }

    /// Number of features (`k`).
    pub fn features(&self) -> usize {
        self.w_enc.rows()
    }

    /// Residual stream width (`d`).
    pub fn hidden_dim(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn w_enc(&self) -> &Matrix<f32> {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f32] {
        &self.b_enc
    }

    pub fn w_dec(&self) -> &Matrix<f32> {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &[f32] {
        &self.b_dec
    }

    /// Decoder direction of `feature`, widened to f64.
    pub fn decoder_column(&self, feature: usize) -> Result<Vec<f64>> {
        if feature >= self.features() {
            return Err(Error::FeatureOutOfRange {
                id: feature,
                features: self.features(),
            });
        }
        Ok((0..self.hidden_dim())
            .map(|r| f64::from(self.w_dec.get(r, feature)))
            .collect())
    }
}

/// Post-ReLU feature activations, `prompts × features`, all entries `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureActivations(Matrix<f64>);

impl FeatureActivations {
    pub fn new(values: Matrix<f64>) -> Result<Self> {
        if let Some(index) = values.as_slice().iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "feature activations must be finite and nonnegative (flat index {index})"
            )));
        }
        Ok(Self(values))
    }

    pub fn prompts(&self) -> usize {
        self.0.rows()
    }

    pub fn features(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix<f64> {
        self.0
    }

    pub fn mean_activations(&self) -> Vec<f64> {
        let mut sums = alloc::vec![0.0; self.features()];
        for p in 0..self.prompts() {
            for (s, v) in sums.iter_mut().zip(self.0.row(p)) {
                *s += v;
            }
        }
        let n = self.prompts().max(1) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    /// Restricts to the given prompt rows.
    pub fn select_prompts(&self, rows: &[usize]) -> Self {
        Self(self.0.select_rows(rows))
    }

    /// Activation of each listed feature across prompts, one vector per feature.
    pub fn feature_columns(&self, features: &[usize]) -> Vec<Vec<f64>> {
        let mut cols: Vec<Vec<f64>> = features.iter().map(|_| Vec::with_capacity(self.prompts())).collect();
        for p in 0..self.prompts() {
            let row = self.0.row(p);
            for (col, &f) in cols.iter_mut().zip(features) {
                col.push(row[f]);
            }
        }
        cols
    }
}

fn check_hidden<T: Copy + Into<f64>>(h: &[T], dim: usize, width: usize) -> Result<()> {
    if width != dim {
        return Err(Error::DimensionMismatch {
            context: "hidden state width",
            expected: dim,
            actual: width,
        });
    }
    if let Some(index) = h.iter().position(|&v| !v.into().is_finite()) {
        return Err(Error::NonFinite {
            name: "hidden states".into(),
            index,
        });
    }
    Ok(())
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `f[p, i] = max(0, (W_enc · h[p] + b_enc)[i])` for every prompt row of `h`.
pub fn encode(h: &Matrix<f32>, sae: &SaeParams) -> Result<FeatureActivations> {
    check_hidden(h.as_slice(), sae.hidden_dim(), h.cols())?;
    let prompts = h.rows();
    let features = sae.features();
    let h64 = h.to_f64();

    let mut pre_t = alloc::vec![0.0f64; features * prompts];
    kernel::matmul_nt(
        h64.as_slice(),
        prompts,
        sae.w_enc.as_slice(),
        features,
        sae.hidden_dim(),
        &mut pre_t,
    );

    let mut out = Matrix::zeros(prompts, features);
    for (f, column) in pre_t.chunks_exact(prompts.max(1)).enumerate().take(features) {
        let bias = f64::from(sae.b_enc[f]);
        for (p, &v) in column.iter().enumerate() {
            out.set(p, f, relu(v + bias));
        }
    }
    Ok(FeatureActivations(out))
}

/// Encodes a single hidden vector.
pub fn encode_one(h: &[f32], sae: &SaeParams) -> Result<Vec<f64>> {
    check_hidden(h, sae.hidden_dim(), h.len())?;
    Ok((0..sae.features())
        .map(|f| {
            let dot: f64 = sae
                .w_enc
                .row(f)
                .iter()
                .zip(h)
                .map(|(&w, &x)| f64::from(w) * f64::from(x))
                .sum();
            relu(dot + f64::from(sae.b_enc[f]))
        })
        .collect())
}

/// `W_dec · f[p] + b_dec` for every prompt.
pub fn decode(f: &FeatureActivations, sae: &SaeParams) -> Result<Matrix<f64>> {
    if f.features() != sae.features() {
        return Err(Error::DimensionMismatch {
            context: "feature activation width",
            expected: sae.features(),
            actual: f.features(),
        });
    }
    let dim = sae.hidden_dim();
    let mut out = Matrix::zeros(f.prompts(), dim);
    for p in 0..f.prompts() {
        let code = f.0.row(p);
        let active: Vec<(usize, f64)> = code.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
        let row = out.row_mut(p);
        for (i, slot) in row.iter_mut().enumerate() {
            let w = sae.w_dec.row(i);
            let mut acc = f64::from(sae.b_dec[i]);
            for &(j, v) in &active {
                acc += f64::from(w[j]) * v;
            }
            *slot = acc;
        }
    }
    Ok(out)
}

/// Per-prompt `‖h − decode(encode(h))‖₂`.
pub fn reconstruction_error(h: &Matrix<f32>, sae: &SaeParams) -> Result<Vec<f64>> {
    let recon = decode(&encode(h, sae)?, sae)?;
    Ok((0..h.rows())
        .map(|p| {
            let ss: f64 = h
                .row(p)
                .iter()
                .zip(recon.row(p))
                .map(|(&a, &b)| {
                    let d = f64::from(a) - b;
                    d * d
                })
                .sum();
            libm::sqrt(ss)
        })
        .collect())
}

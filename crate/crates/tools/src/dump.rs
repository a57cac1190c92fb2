// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk dump format: `manifest.json`, one or more raw little-endian f32
//! files, and a JSON-lines prompt metadata file.
//!
//! Tensor names are restricted to a fixed vocabulary so every tensor's
//! shape can be checked against the manifest header:
//!
//! | name                      | shape                       |
//! |---------------------------|-----------------------------|
//! | `activations.layer_{L}`   | `[prompt_count, hidden_dim]` |
//! | `W_enc`, `b_enc`          | `[k, hidden_dim]`, `[k]`    |
//! | `W_dec`, `b_dec`          | `[hidden_dim, k]`, `[hidden_dim]` |
//! | `rivalry_axis.{pair_id}`  | `[hidden_dim]`              |
//! | `baseline_vector`         | `[hidden_dim]`              |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use rivalry_core::Matrix;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";
pub const PROMPT_FILE: &str = "prompts.jsonl";
pub const ACTIVATION_PREFIX: &str = "activations.layer_";
pub const AXIS_PREFIX: &str = "rivalry_axis.";
pub const BASELINE_TENSOR: &str = "baseline_vector";
pub const SAE_TENSORS: [&str; 4] = ["W_enc", "b_enc", "W_dec", "b_dec"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DumpError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("file {file} is truncated: expected {expected} bytes, found {actual}")]
    Truncated { file: PathBuf, expected: u64, actual: u64 },
    #[error("file {file} is oversized: expected {expected} bytes, found {actual}")]
    Oversized { file: PathBuf, expected: u64, actual: u64 },
    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: i64, supported: u32 },
    #[error("tensor {tensor} has a non-finite value at flat index {index}")]
    NonFinite { tensor: String, index: usize },
    #[error("invalid dump: {0}")]
    Validation(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl DumpError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DumpError::MissingFile(_) => "missing_file",
            DumpError::Truncated { .. } => "truncated_file",
            DumpError::Oversized { .. } => "oversized_file",
            DumpError::VersionMismatch { .. } => "version_mismatch",
            DumpError::NonFinite { .. } => "non_finite",
            DumpError::Validation(_) => "validation",
            DumpError::Io { .. } => "io",
            DumpError::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            DumpError::MissingFile(path.to_path_buf())
        } else {
            DumpError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        }
    }

    pub(crate) fn json(path: &Path, e: serde_json::Error) -> Self {
        DumpError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = DumpError> = std::result::Result<T, E>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DumpError::Validation(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub layers: Vec<usize>,
    pub hidden_dim: usize,
    pub prompt_count: usize,
    pub tensor_entries: Vec<TensorEntry>,
    pub prompt_metadata_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub ground_truth_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_first_words: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_token_probability: Option<f64>,
}

/// A dense f32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return invalid(format!("shape {shape:?} does not hold {} values", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_matrix(&self) -> Result<Matrix<f32>> {
        match self.shape[..] {
            [r, c] => Ok(Matrix::from_vec(r, c, self.data.clone()).expect("shape checked")),
            _ => invalid(format!("expected a 2-D tensor, found shape {:?}", self.shape)),
        }
    }
}

impl From<Matrix<f32>> for Tensor {
    fn from(m: Matrix<f32>) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: m.into_vec(),
        }
    }
}

/// A dump held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, Tensor>,
    pub prompts: Vec<PromptRecord>,
}

impl Dump {
    /// Builds a manifest that stores `tensors` contiguously, in name order,
    /// in a single binary file.
    pub fn new(
        model_id: impl Into<String>,
        layers: Vec<usize>,
        hidden_dim: usize,
        tensors: BTreeMap<String, Tensor>,
        prompts: Vec<PromptRecord>,
    ) -> Result<Self> {
        let mut offset = 0u64;
        let tensor_entries = tensors
            .iter()
            .map(|(name, t)| {
                let byte_length = t.data.len() as u64 * 4;
                let entry = TensorEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape.clone(),
                    file: TENSOR_FILE.into(),
                    byte_offset: offset,
                    byte_length,
                };
                offset += byte_length;
                entry
            })
            .collect();
        let dump = Dump {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                model_id: model_id.into(),
                layers,
                hidden_dim,
                prompt_count: prompts.len(),
                tensor_entries,
                prompt_metadata_file: PROMPT_FILE.into(),
            },
            tensors,
            prompts,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| DumpError::Validation(format!("dump has no tensor {name}")))
    }

    /// `[prompt_count, hidden_dim]` activations of one layer.
    pub fn activations(&self, layer: usize) -> Result<Matrix<f32>> {
        self.tensor(&activation_name(layer))?.to_matrix()
    }

    /// Checks manifest, tensors and prompts against each other.
    pub fn validate(&self) -> Result<()> {
        validate_manifest(&self.manifest)?;
        let names: BTreeSet<&str> = self.manifest.tensor_entries.iter().map(|e| e.name.as_str()).collect();
        for entry in &self.manifest.tensor_entries {
            let t = self.tensors.get(&entry.name).ok_or_else(|| {
                DumpError::Validation(format!("manifest lists {} but no array was given", entry.name))
            })?;
            if t.shape != entry.shape {
                return invalid(format!(
                    "tensor {} has shape {:?}, manifest says {:?}",
                    entry.name, t.shape, entry.shape
                ));
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(DumpError::NonFinite {
                    tensor: entry.name.clone(),
                    index: i,
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !names.contains(k.as_str())) {
            return invalid(format!("array {extra} is not listed in the manifest"));
        }
        validate_prompts(&self.manifest, &self.prompts)
    }
}

pub fn activation_name(layer: usize) -> String {
    format!("{ACTIVATION_PREFIX}{layer}")
}

fn safe_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Structural checks that need no file access.
pub fn validate_manifest(m: &Manifest) -> Result<()> {
    if m.format_version != FORMAT_VERSION {
        return Err(DumpError::VersionMismatch {
            found: i64::from(m.format_version),
            supported: FORMAT_VERSION,
        });
    }
    if m.model_id.trim().is_empty() {
        return invalid("model_id is empty");
    }
    if m.hidden_dim == 0 {
        return invalid("hidden_dim must be positive");
    }
    if m.layers.windows(2).any(|w| w[0] >= w[1]) {
        return invalid(format!("layers {:?} must be strictly increasing", m.layers));
    }
    if !safe_relative(&m.prompt_metadata_file) {
        return invalid(format!(
            "prompt_metadata_file {:?} is not a plain relative path",
            m.prompt_metadata_file
        ));
    }

    let d = m.hidden_dim;
    let mut seen = BTreeSet::new();
    let mut activation_layers = BTreeSet::new();
    let mut sae = BTreeMap::new();
    for e in &m.tensor_entries {
        if !seen.insert(e.name.as_str()) {
            return invalid(format!("tensor {} listed twice", e.name));
        }
        if e.dtype != "f32" {
            return invalid(format!(
                "tensor {} has dtype {:?}; only f32 is supported",
                e.name, e.dtype
            ));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return invalid(format!("tensor {} has empty shape {:?}", e.name, e.shape));
        }
        let elements = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &s| acc.checked_mul(s as u64))
            .and_then(|n| n.checked_mul(4));
        if elements != Some(e.byte_length) {
            return invalid(format!(
                "tensor {} byte_length {} does not equal 4 x product of shape {:?}",
                e.name, e.byte_length, e.shape
            ));
        }
        if !safe_relative(&e.file) {
            return invalid(format!(
                "tensor {} file {:?} is not a plain relative path",
                e.name, e.file
            ));
        }
        if e.file == m.prompt_metadata_file || e.file == MANIFEST_FILE {
            return invalid(format!("tensor {} points into a metadata file", e.name));
        }
        let expect = |shape: &[usize]| -> Result<()> {
            if e.shape != shape {
                return invalid(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name, e.shape, shape
                ));
            }
            Ok(())
        };
        if let Some(layer) = e.name.strip_prefix(ACTIVATION_PREFIX) {
            let layer: usize = layer
                .parse()
                .ok()
                .filter(|l: &usize| l.to_string() == layer)
                .ok_or_else(|| DumpError::Validation(format!("bad activation tensor name {}", e.name)))?;
            if !m.layers.contains(&layer) {
                return invalid(format!("tensor {} refers to layer {layer}, not in layers", e.name));
            }
            expect(&[m.prompt_count, d])?;
            activation_layers.insert(layer);
        } else if SAE_TENSORS.contains(&e.name.as_str()) {
            sae.insert(e.name.as_str(), e.shape.clone());
        } else if e.name == BASELINE_TENSOR || e.name.strip_prefix(AXIS_PREFIX).is_some_and(|id| !id.is_empty()) {
            expect(&[d])?;
        } else {
            return invalid(format!("unrecognized tensor name {}", e.name));
        }
    }
    if !activation_layers.is_empty() && activation_layers.len() != m.layers.len() {
        return invalid("every listed layer needs an activation tensor");
    }
    if activation_layers.is_empty() && m.prompt_count > 0 && m.tensor_entries.is_empty() {
        return invalid("dump has prompts but no tensors");
    }
    if !sae.is_empty() {
        if sae.len() != 4 {
            return invalid("SAE dumps need all of W_enc, b_enc, W_dec, b_dec");
        }
        if m.layers.len() != 1 {
            return invalid("an SAE dump describes exactly one layer");
        }
        let k = sae["W_enc"][0];
        let want = [
            ("W_enc", vec![k, d]),
            ("b_enc", vec![k]),
            ("W_dec", vec![d, k]),
            ("b_dec", vec![d]),
        ];
        for (name, shape) in want {
            if sae[name] != shape {
                return invalid(format!("{name} has shape {:?}, expected {shape:?}", sae[name]));
            }
        }
    }

    // byte ranges within one file must not overlap
    let mut by_file: BTreeMap<&str, Vec<(u64, u64, &str)>> = BTreeMap::new();
    for e in &m.tensor_entries {
        let end = e
            .byte_offset
            .checked_add(e.byte_length)
            .ok_or_else(|| DumpError::Validation(format!("tensor {} byte range overflows", e.name)))?;
        by_file.entry(&e.file).or_default().push((e.byte_offset, end, &e.name));
    }
    for ranges in by_file.values_mut() {
        ranges.sort();
        for w in ranges.windows(2) {
            if w[1].0 < w[0].1 {
                return invalid(format!("tensors {} and {} overlap", w[0].2, w[1].2));
            }
        }
    }
    Ok(())
}

fn validate_prompts(m: &Manifest, prompts: &[PromptRecord]) -> Result<()> {
    if prompts.len() != m.prompt_count {
        return invalid(format!(
            "manifest declares {} prompts, metadata has {}",
            m.prompt_count,
            prompts.len()
        ));
    }
    let mut ids = BTreeSet::new();
    for p in prompts {
        if !ids.insert(p.prompt_id.as_str()) {
            return invalid(format!("duplicate prompt_id {}", p.prompt_id));
        }
        if let Some(prob) = p.top_token_probability {
            if !(0.0..=1.0).contains(&prob) {
                return invalid(format!("prompt {} has top_token_probability {prob}", p.prompt_id));
            }
        }
    }
    Ok(())
}

fn file_lengths(m: &Manifest) -> BTreeMap<&str, u64> {
    let mut out: BTreeMap<&str, u64> = BTreeMap::new();
    for e in &m.tensor_entries {
        let end = e.byte_offset + e.byte_length;
        let len = out.entry(&e.file).or_default();
        *len = (*len).max(end);
    }
    out
}

/// Writes `dump` into `dir`, creating it if needed.
pub fn write_dump(dir: &Path, dump: &Dump) -> Result<()> {
    dump.validate()?;
    fs::create_dir_all(dir).map_err(|e| DumpError::io(dir, e))?;
    let m = &dump.manifest;
    for (file, len) in file_lengths(m) {
        let mut buf = vec![0u8; len as usize];
        for e in m.tensor_entries.iter().filter(|e| e.file == file) {
            let start = e.byte_offset as usize;
            let t = &dump.tensors[&e.name];
            for (i, v) in t.data.iter().enumerate() {
                buf[start + 4 * i..start + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(file);
        fs::write(&path, buf).map_err(|e| DumpError::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(m).map_err(|e| DumpError::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| DumpError::io(&path, e))?;
    write_jsonl(&dir.join(&m.prompt_metadata_file), &dump.prompts)
}

/// Reads and fully validates a dump directory.
pub fn read_dump(dir: &Path) -> Result<Dump> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DumpError::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| DumpError::json(&path, e))?;
    match raw.get("format_version").and_then(serde_json::Value::as_i64) {
        Some(v) if v == i64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(DumpError::VersionMismatch {
                found: v,
                supported: FORMAT_VERSION,
            })
        }
        None => return invalid("manifest has no integer format_version"),
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| DumpError::json(&path, e))?;
    validate_manifest(&manifest)?;

    let mut tensors = BTreeMap::new();
    for (file, expected) in file_lengths(&manifest) {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| DumpError::io(&path, e))?;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(DumpError::Truncated {
                file: path,
                expected,
                actual,
            });
        }
        if actual > expected {
            return Err(DumpError::Oversized {
                file: path,
                expected,
                actual,
            });
        }
        for e in manifest.tensor_entries.iter().filter(|e| e.file == file) {
            let start = e.byte_offset as usize;
            let data: Vec<f32> = bytes[start..start + e.byte_length as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(DumpError::NonFinite {
                    tensor: e.name.clone(),
                    index,
                });
            }
            tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
    }
    let prompts = read_jsonl(&dir.join(&manifest.prompt_metadata_file))?;
    let dump = Dump {
        manifest,
        tensors,
        prompts,
    };
    validate_prompts(&dump.manifest, &dump.prompts)?;
    Ok(dump)
}

/// One JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| DumpError::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DumpError::io(path, e))?;
    f.write_all(&out).map_err(|e| DumpError::io(path, e))
}

/// Reads JSON lines, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| DumpError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DumpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DumpError::Json {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(id: &str) -> PromptRecord {
        PromptRecord {
            prompt_id: id.into(),
            text: format!("text of {id}"),
            ground_truth_answers: vec!["x".into()],
            sampled_first_words: None,
            generated_output: None,
            top_token_probability: Some(0.5),
        }
    }

    #[test]
    fn small_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut tensors = BTreeMap::new();
        tensors.insert(
            activation_name(0),
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let dump = Dump::new("toy", vec![0], 3, tensors, vec![prompt("a"), prompt("b")]).unwrap();
        write_dump(dir.path(), &dump).unwrap();
        assert_eq!(dump.manifest.tensor_entries[0].shape, vec![2, 3]);
        assert_eq!(fs::metadata(dir.path().join(TENSOR_FILE)).unwrap().len(), 24);
        assert_eq!(read_dump(dir.path()).unwrap(), dump);
    }

    #[test]
    fn byte_length_of_full_size_layer() {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            activation_name(10),
            Tensor::new(vec![200, 2304], vec![0.0; 200 * 2304]).unwrap(),
        );
        let prompts = (0..200).map(|i| prompt(&format!("p{i}"))).collect();
        let dump = Dump::new("m", vec![10], 2304, tensors, prompts).unwrap();
        assert_eq!(dump.manifest.tensor_entries[0].byte_length, 200 * 2304 * 4);
        assert_eq!(dump.manifest.tensor_entries[0].byte_length, 1_843_200);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tensors = BTreeMap::new();
        tensors.insert(activation_name(0), Tensor::new(vec![2, 4], vec![0.0; 8]).unwrap());
        let err = Dump::new("toy", vec![0], 3, tensors, vec![prompt("a"), prompt("b")]).unwrap_err();
        assert_eq!(err.code(), "validation");
    }

    #[test]
    fn non_finite_rejected_on_write() {
        let mut tensors = BTreeMap::new();
        tensors.insert(
            activation_name(0),
            Tensor::new(vec![1, 3], vec![0.0, f32::NAN, 1.0]).unwrap(),
        );
        let err = Dump::new("toy", vec![0], 3, tensors, vec![prompt("a")]).unwrap_err();
        assert_eq!(
            err,
            DumpError::NonFinite {
                tensor: activation_name(0),
                index: 1
            }
        );
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let mut tensors = BTreeMap::new();
        tensors.insert(BASELINE_TENSOR.to_string(), Tensor::vector(vec![1.0, 0.0]));
        let dump = Dump::new("toy", vec![0], 2, tensors, vec![]).unwrap();
        let err = write_dump(&blocker.join("sub"), &dump).unwrap_err();
        assert_eq!(err.code(), "io");
    }
}

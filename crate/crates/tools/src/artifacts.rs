// SPDX-License-Identifier: MIT OR Apache-2.0

//! Typed files built on the dump format: SAE parameter dumps, steering plan
//! directories, and versioned JSON-lines record files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rivalry_core::steering::{GenerationConfig, PlanEntry, PlanPair, SteeringPlan};
use rivalry_core::{Matrix, SaeParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dump::{self, read_dump, write_dump, Dump, DumpError, PromptRecord, Result, Tensor};

pub const PLAN_FILE: &str = "plan.json";
pub const PLAN_FORMAT_VERSION: u32 = 1;
pub const RECORD_FORMAT_VERSION: u32 = 1;

fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(DumpError::Validation(msg.into()))
}

/// Stores SAE parameters as a prompt-free dump of one layer. The checkpoint
/// tag becomes the dump's `model_id`.
pub fn write_sae(dir: &Path, sae: &SaeParams) -> Result<()> {
    let mut tensors = BTreeMap::new();
    tensors.insert("W_enc".to_string(), Tensor::from(sae.w_enc().clone()));
    tensors.insert("b_enc".to_string(), Tensor::vector(sae.b_enc().to_vec()));
    tensors.insert("W_dec".to_string(), Tensor::from(sae.w_dec().clone()));
    tensors.insert("b_dec".to_string(), Tensor::vector(sae.b_dec().to_vec()));
    let tag = if sae.checkpoint_tag.is_empty() {
        "sae"
    } else {
        &sae.checkpoint_tag
    };
    let dump = Dump::new(tag, vec![sae.layer_index], sae.hidden_dim(), tensors, Vec::new())?;
    write_dump(dir, &dump)
}

pub fn read_sae(dir: &Path) -> Result<SaeParams> {
    let d = read_dump(dir)?;
    let layer = match d.manifest.layers[..] {
        [l] => l,
        _ => return validation(format!("{} is not a single-layer SAE dump", dir.display())),
    };
    let matrix = |name: &str| -> Result<Matrix<f32>> { d.tensor(name)?.to_matrix() };
    let vector = |name: &str| -> Result<Vec<f32>> { Ok(d.tensor(name)?.data().to_vec()) };
    SaeParams::new(
        layer,
        d.manifest.model_id.clone(),
        matrix("W_enc")?,
        vector("b_enc")?,
        matrix("W_dec")?,
        vector("b_dec")?,
    )
    .map_err(|e| DumpError::Validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanPairEntry {
    pub pair_id: String,
    pub feature_a: usize,
    pub feature_b: usize,
    pub correlation: f64,
    /// Tensor holding the unit rivalry axis.
    pub axis_tensor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineEntry {
    pub tensor: String,
    pub seed_used: u64,
    pub resamples: u32,
}

/// Protocol half of a steering plan; the vectors live in the dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSidecar {
    pub plan_format_version: u32,
    pub layer_index: usize,
    pub pairs: Vec<PlanPairEntry>,
    pub baseline_vector: BaselineEntry,
    pub multipliers: Vec<f64>,
    pub injection_site: String,
    pub prompt_ids: Vec<String>,
    pub generation_config: GenerationConfig,
    /// Every run the plan requires, in a fixed order.
    pub entries: Vec<PlanEntry>,
}

/// Writes a plan directory: a dump with one vector per pair plus the
/// baseline, the plan's prompts as metadata, and `plan.json`.
pub fn write_plan(dir: &Path, plan: &SteeringPlan, model_id: &str, prompts: Vec<PromptRecord>) -> Result<()> {
    let d = plan.baseline_vector.len();
    let by_id: BTreeMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
    if plan.prompt_ids.len() != prompts.len() || plan.prompt_ids.iter().any(|id| !by_id.contains_key(id.as_str())) {
        return validation("plan prompt ids and prompt records disagree");
    }
    let prompts: Vec<PromptRecord> = plan.prompt_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();

    let mut tensors = BTreeMap::new();
    let mut pairs = Vec::with_capacity(plan.pairs.len());
    for p in &plan.pairs {
        let name = format!("{}{}", dump::AXIS_PREFIX, p.pair_id);
        if p.rivalry_axis.len() != d {
            return validation(format!(
                "axis {} has length {}, expected {d}",
                p.pair_id,
                p.rivalry_axis.len()
            ));
        }
        if tensors
            .insert(name.clone(), Tensor::vector(p.rivalry_axis.clone()))
            .is_some()
        {
            return validation(format!("pair {} appears twice", p.pair_id));
        }
        pairs.push(PlanPairEntry {
            pair_id: p.pair_id.clone(),
            feature_a: p.feature_a,
            feature_b: p.feature_b,
            correlation: p.correlation,
            axis_tensor: name,
        });
    }
    tensors.insert(
        dump::BASELINE_TENSOR.to_string(),
        Tensor::vector(plan.baseline_vector.clone()),
    );
    let dump = Dump::new(model_id, vec![plan.layer_index], d, tensors, prompts)?;
    write_dump(dir, &dump)?;

    let sidecar = PlanSidecar {
        plan_format_version: PLAN_FORMAT_VERSION,
        layer_index: plan.layer_index,
        pairs,
        baseline_vector: BaselineEntry {
            tensor: dump::BASELINE_TENSOR.into(),
            seed_used: plan.baseline_seed,
            resamples: plan.baseline_resamples,
        },
        multipliers: plan.multipliers.clone(),
        injection_site: plan.injection_site.clone(),
        prompt_ids: plan.prompt_ids.clone(),
        generation_config: plan.generation_config.clone(),
        entries: plan.entries(),
    };
    write_json(&dir.join(PLAN_FILE), &sidecar)
}

/// Reads a plan directory back into a [`SteeringPlan`] plus its dump.
pub fn read_plan(dir: &Path) -> Result<(SteeringPlan, Dump)> {
    let dump = read_dump(dir)?;
    let path = dir.join(PLAN_FILE);
    let raw: serde_json::Value = read_json(&path)?;
    match raw.get("plan_format_version").and_then(serde_json::Value::as_i64) {
        Some(v) if v == i64::from(PLAN_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(DumpError::VersionMismatch {
                found: v,
                supported: PLAN_FORMAT_VERSION,
            })
        }
        None => return validation("plan.json has no integer plan_format_version"),
    }
    let side: PlanSidecar = serde_json::from_value(raw).map_err(|e| DumpError::json(&path, e))?;
    if dump.manifest.layers != [side.layer_index] {
        return validation("plan layer does not match its dump");
    }
    let dump_ids: Vec<&str> = dump.prompts.iter().map(|p| p.prompt_id.as_str()).collect();
    if dump_ids != side.prompt_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return validation("plan prompt ids do not match the dump's prompts");
    }
    if side.multipliers.is_empty() {
        return validation("plan has no multipliers");
    }
    let vector = |name: &str| -> Result<Vec<f32>> {
        let v = dump.tensor(name)?.data().to_vec();
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return validation(format!("plan vector {name} has norm {norm}"));
        }
        Ok(v)
    };
    let pairs = side
        .pairs
        .iter()
        .map(|p| {
            Ok(PlanPair {
                pair_id: p.pair_id.clone(),
                feature_a: p.feature_a,
                feature_b: p.feature_b,
                correlation: p.correlation,
                rivalry_axis: vector(&p.axis_tensor)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = SteeringPlan {
        layer_index: side.layer_index,
        pairs,
        baseline_vector: vector(&side.baseline_vector.tensor)?,
        baseline_seed: side.baseline_vector.seed_used,
        baseline_resamples: side.baseline_vector.resamples,
        multipliers: side.multipliers,
        injection_site: side.injection_site,
        prompt_ids: side.prompt_ids,
        generation_config: side.generation_config,
    };
    if plan.entries() != side.entries {
        return validation("plan entries do not match the plan's pairs, prompts and multipliers");
    }
    Ok((plan, dump))
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    format_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct Versioned<T> {
    format_version: u32,
    #[serde(flatten)]
    record: T,
}

/// JSON lines, each tagged with the record format version.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let lines: Vec<VersionedRef<'_, T>> = records
        .iter()
        .map(|record| VersionedRef {
            format_version: RECORD_FORMAT_VERSION,
            record,
        })
        .collect();
    dump::write_jsonl(path, &lines)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    dump::read_jsonl::<Versioned<T>>(path)?
        .into_iter()
        .map(|v| {
            if v.format_version != RECORD_FORMAT_VERSION {
                return Err(DumpError::VersionMismatch {
                    found: i64::from(v.format_version),
                    supported: RECORD_FORMAT_VERSION,
                });
            }
            Ok(v.record)
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DumpError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| DumpError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DumpError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DumpError::json(path, e))
}

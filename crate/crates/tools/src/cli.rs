// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `rivalry` command line.
//!
//! Every subcommand reads its inputs from the data directory (flag
//! `--data-dir`, environment `RIVALRY_DATA_DIR`, default `.`) unless a path
//! is given explicitly, writes its outputs under `--out` (default: the data
//! directory), records the run in `run_manifest.json`, and prints a
//! one-line JSON summary. Failures print `{"status":"error","code":...}` on
//! stderr and exit nonzero.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rivalry_core::entropy::{split_conditions, Condition, ConditionAssignment, SplitConfig};
use rivalry_core::evaluate::{compare_signals, label_correct, SignalComparison, UncertaintyRecord};
use rivalry_core::rivalry::{
    self, layer_scan, select_peak_layer, LayerInput, PromptRivalry, RivalryReport, ScanConfig, TopRivalPairs,
};
use rivalry_core::stats::{CalibrationBin, RocPoint};
use rivalry_core::steering::{
    self, build_plan, flip_rate_analysis, gap_vs_strength, FlipRateTable, GapVsStrength, GenerationRecord, PlanConfig,
};
use rivalry_core::{synth, SaeParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{
    read_json, read_plan, read_records, read_sae, write_json, write_plan, write_records, write_sae,
};
use crate::config::{Overrides, RunConfig};
use crate::dump::{self, activation_name, read_dump, write_dump, Dump, DumpError, PromptRecord, Tensor};
use crate::error::ToolError;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const RUN_MANIFEST: &str = "run_manifest.json";

pub const ACTIVATIONS_DIR: &str = "activations";
pub const SAE_DIR: &str = "sae";
pub const PLAN_DIR: &str = "plan";
pub const CONDITIONS_FILE: &str = "conditions.jsonl";
pub const REPORT_FILE: &str = "rivalry_report.json";
pub const PEAK_FILE: &str = "peak_layer.json";
pub const PAIRS_FILE: &str = "rival_pairs.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const FLIP_RATE_FILE: &str = "flip_rates.json";
pub const FLIP_RATE_CSV: &str = "flip_rates.csv";
pub const SCORES_FILE: &str = "prompt_scores.json";
pub const UNCERTAINTY_FILE: &str = "uncertainty_records.jsonl";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const ROC_CSV: &str = "roc.csv";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const SYNTH_TRUTH_FILE: &str = "synth_truth.json";

#[derive(Debug, Parser)]
#[command(name = "rivalry", version, about = "Feature rivalry analysis over activation dumps")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for outputs [default: the data directory].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory inputs are read from by default.
    #[arg(long, global = true, env = "RIVALRY_DATA_DIR", default_value = ".")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Activation dump [default: <data-dir>/activations].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of per-layer SAE dumps named layer_<L> [default: <data-dir>/sae].
    #[arg(long)]
    pub sae_dir: Option<PathBuf>,
    /// Condition assignments from split-entropy [default: <data-dir>/conditions.jsonl].
    #[arg(long)]
    pub conditions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Prompts, activations for every layer, and SAEs.
    Dataset,
    /// Generation records answering a steering plan.
    GenerationRecords,
    /// Uncertainty records with tuned signal strength.
    UncertaintyRecords,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign prompts to ambiguous/unambiguous by first-word entropy.
    SplitEntropy {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-layer rivalry of both conditions with Mann-Whitney testing.
    RivalryScan {
        #[command(flatten)]
        inputs: DataArgs,
        /// Comma-separated layers to scan.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Layer with the largest rivalry gap between conditions.
    PeakLayer {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Most negatively correlated feature pairs of the ambiguous condition.
    RivalPairs {
        #[command(flatten)]
        inputs: DataArgs,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Layer to use [default: the report's peak layer].
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Steering plan along the rival pairs' axes for a model runner.
    EmitSteeringPlan {
        #[command(flatten)]
        inputs: DataArgs,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
    },
    /// Flip rates of generation records against the random baseline.
    FlipRate {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Per-prompt rivalry scores joined with correctness and confidence.
    ScorePrompts {
        #[command(flatten)]
        inputs: DataArgs,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// AUROC and calibration of rivalry versus softmax confidence.
    Evaluate {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        bin_count: Option<usize>,
    },
    /// Seeded synthetic inputs for running the pipeline without a model.
    Synth {
        #[arg(long, value_enum, default_value = "dataset")]
        kind: SynthKind,
        /// Plan to answer, for generation-records [default: <data-dir>/plan].
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        prompt_count: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SplitEntropy { .. } => "split-entropy",
            Command::RivalryScan { .. } => "rivalry-scan",
            Command::PeakLayer { .. } => "peak-layer",
            Command::RivalPairs { .. } => "rival-pairs",
            Command::EmitSteeringPlan { .. } => "emit-steering-plan",
            Command::FlipRate { .. } => "flip-rate",
            Command::ScorePrompts { .. } => "score-prompts",
            Command::Evaluate { .. } => "evaluate",
            Command::Synth { .. } => "synth",
        }
    }

    fn overrides(&self, seed: Option<u64>) -> Overrides {
        let mut o = Overrides {
            seed,
            ..Default::default()
        };
        match self {
            Command::RivalryScan { layers, .. } => o.layers = layers.clone(),
            Command::RivalPairs { count, .. } => o.pair_count = *count,
            Command::EmitSteeringPlan { multipliers, .. } => o.multipliers = multipliers.clone(),
            Command::Evaluate { bin_count, .. } => o.bin_count = *bin_count,
            Command::ScorePrompts { layer, .. } => o.score_layer = *layer,
            _ => {}
        }
        o
    }
}

/// Envelope of every JSON report: the resolved configuration travels with
/// the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report<T> {
    pub format_version: u32,
    pub subcommand: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub result: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakLayer {
    pub layer: usize,
    pub rivalry_gap: f64,
    pub significant: bool,
    pub direction_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RivalPairsResult {
    pub layer: usize,
    /// Condition the correlations were computed on.
    pub condition: Condition,
    pub selected_feature_count: usize,
    pub excluded_features: Vec<usize>,
    pub top: TopRivalPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipRateResult {
    pub table: FlipRateTable,
    pub gap_vs_strength: GapVsStrength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptScore {
    pub prompt_id: String,
    pub condition: Condition,
    pub rivalry: PromptRivalry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptScores {
    pub layer: usize,
    pub excluded_prompts: usize,
    pub scores: Vec<PromptScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTruth {
    pub dataset: synth::DatasetConfig,
    pub ambiguous_prompt_ids: Vec<String>,
    pub unambiguous_prompt_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub subcommand: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub runs: BTreeMap<String, RunEntry>,
}

struct Ctx {
    config: RunConfig,
    data_dir: PathBuf,
    out: PathBuf,
    subcommand: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn input(&mut self, key: &str, given: &Option<PathBuf>, default: &str) -> PathBuf {
        let p = given.clone().unwrap_or_else(|| self.data_dir.join(default));
        self.inputs.insert(key.to_string(), p.display().to_string());
        p
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn report<T: Serialize>(&mut self, name: &str, result: T) -> Result<(), ToolError> {
        let report = Report {
            format_version: REPORT_FORMAT_VERSION,
            subcommand: self.subcommand.to_string(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            result,
        };
        let path = self.output(name);
        Ok(write_json(&path, &report)?)
    }

    fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            activation_threshold: self.config.activation_threshold,
            subsample_size: self.config.subsample_size,
            seed: self.config.stage_seed("feature-subsample"),
            alpha: self.config.alpha,
        }
    }
}

/// Reads a report written by another subcommand.
pub fn read_report<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Report<T>, ToolError> {
    let report: Report<T> = read_json(path)?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(DumpError::VersionMismatch {
            found: i64::from(report.format_version),
            supported: REPORT_FORMAT_VERSION,
        }
        .into());
    }
    Ok(report)
}

/// Parses `args`, runs the subcommand, prints the summary or error line and
/// returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                return 0;
            }
            ErrorKind::InvalidSubcommand => {
                let name = match e.get(ContextKind::InvalidSubcommand) {
                    Some(ContextValue::String(s)) => s.clone(),
                    _ => String::new(),
                };
                return report_error(&ToolError::UnknownSubcommand(name));
            }
            _ => {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
                return report_error(&ToolError::Usage(first.to_string()));
            }
        },
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &ToolError) -> i32 {
    eprintln!(
        "{}",
        json!({"status": "error", "code": e.code(), "message": e.to_string()})
    );
    e.exit_status()
}

/// Runs one parsed invocation and returns its summary line.
pub fn run(cli: Cli) -> Result<Value, ToolError> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.command.overrides(cli.seed))?;
    let out = cli.out.clone().unwrap_or_else(|| cli.data_dir.clone());
    fs::create_dir_all(&out).map_err(|e| DumpError::io(&out, e))?;
    let mut ctx = Ctx {
        config,
        data_dir: cli.data_dir.clone(),
        out,
        subcommand: cli.command.name(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let (run_key, mut summary) = match &cli.command {
        Command::SplitEntropy { data } => ("split-entropy".to_string(), split_entropy(&mut ctx, data)?),
        Command::RivalryScan { inputs, .. } => ("rivalry-scan".into(), rivalry_scan(&mut ctx, inputs)?),
        Command::PeakLayer { report } => ("peak-layer".into(), peak_layer(&mut ctx, report)?),
        Command::RivalPairs {
            inputs, report, layer, ..
        } => ("rival-pairs".into(), rival_pairs(&mut ctx, inputs, report, *layer)?),
        Command::EmitSteeringPlan { inputs, pairs, .. } => {
            ("emit-steering-plan".into(), emit_plan(&mut ctx, inputs, pairs)?)
        }
        Command::FlipRate { records, pairs } => ("flip-rate".into(), flip_rate(&mut ctx, records, pairs)?),
        Command::ScorePrompts { inputs, .. } => ("score-prompts".into(), score_prompts(&mut ctx, inputs)?),
        Command::Evaluate { records, .. } => ("evaluate".into(), evaluate(&mut ctx, records)?),
        Command::Synth {
            kind,
            plan,
            prompt_count,
            hidden_dim,
        } => {
            let key = format!(
                "synth:{}",
                kind.to_possible_value().expect("no skipped variants").get_name()
            );
            let s = match kind {
                SynthKind::Dataset => synth_dataset(&mut ctx, *prompt_count, *hidden_dim)?,
                SynthKind::GenerationRecords => synth_generation_records(&mut ctx, plan)?,
                SynthKind::UncertaintyRecords => synth_uncertainty(&mut ctx)?,
            };
            (key, s)
        }
    };
    let outputs = record_run(&ctx, &run_key)?;
    let obj = summary.as_object_mut().expect("summaries are objects");
    let mut line = serde_json::Map::new();
    line.insert("status".into(), json!("ok"));
    line.insert("subcommand".into(), json!(ctx.subcommand));
    line.append(obj);
    line.insert("outputs".into(), json!(outputs));
    Ok(Value::Object(line))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), ToolError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| DumpError::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| DumpError::io(path, err)))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Adds this run to the run directory's manifest and returns the output
/// paths relative to the run directory.
fn record_run(ctx: &Ctx, key: &str) -> Result<Vec<String>, ToolError> {
    let mut files = Vec::new();
    for p in &ctx.outputs {
        collect_files(p, &mut files)?;
    }
    let outputs = files
        .iter()
        .map(|f| {
            let bytes = fs::metadata(f).map_err(|e| DumpError::io(f, e))?.len();
            let rel = f.strip_prefix(&ctx.out).unwrap_or(f);
            Ok(OutputFile {
                path: rel.display().to_string(),
                bytes,
            })
        })
        .collect::<Result<Vec<_>, ToolError>>()?;
    let path = ctx.out.join(RUN_MANIFEST);
    let mut manifest: RunManifest = if path.exists() {
        read_json(&path)?
    } else {
        RunManifest::default()
    };
    manifest.format_version = REPORT_FORMAT_VERSION;
    let names = ctx
        .outputs
        .iter()
        .map(|p| p.strip_prefix(&ctx.out).unwrap_or(p).display().to_string())
        .collect();
    manifest.runs.insert(
        key.to_string(),
        RunEntry {
            subcommand: ctx.subcommand.to_string(),
            config: ctx.config.clone(),
            inputs: ctx.inputs.clone(),
            outputs,
        },
    );
    write_json(&path, &manifest)?;
    Ok(names)
}

fn condition_counts(assignments: &[ConditionAssignment]) -> Value {
    let count = |c: Condition| assignments.iter().filter(|a| a.condition == c).count();
    json!({
        "ambiguous": count(Condition::Ambiguous),
        "unambiguous": count(Condition::Unambiguous),
        "excluded": count(Condition::Excluded),
    })
}

fn split_entropy(ctx: &mut Ctx, data: &Option<PathBuf>) -> Result<Value, ToolError> {
    let dump_path = ctx.input("data", data, ACTIVATIONS_DIR);
    let dump = read_dump(&dump_path)?;
    let samples =
        dump.prompts
            .iter()
            .map(|p| {
                let words = p.sampled_first_words.clone().ok_or_else(|| {
                    DumpError::Validation(format!("prompt {} has no sampled_first_words", p.prompt_id))
                })?;
                Ok((p.prompt_id.clone(), words))
            })
            .collect::<Result<Vec<_>, ToolError>>()?;
    let split = SplitConfig {
        high_threshold: ctx.config.entropy_high_threshold,
        low_threshold: ctx.config.entropy_low_threshold,
        first_word: ctx.config.first_word,
    };
    let assignments = split_conditions(&samples, &split)?;
    let path = ctx.output(CONDITIONS_FILE);
    write_records(&path, &assignments)?;
    Ok(json!({ "conditions": condition_counts(&assignments) }))
}

/// Row indices of each condition, in dump order.
struct ConditionRows {
    ambiguous: Vec<usize>,
    unambiguous: Vec<usize>,
    condition: Vec<Condition>,
}

fn condition_rows(dump: &Dump, path: &Path) -> Result<ConditionRows, ToolError> {
    let assignments: Vec<ConditionAssignment> = read_records(path)?;
    let mut by_id = BTreeMap::new();
    for a in &assignments {
        if by_id.insert(a.prompt_id.as_str(), a.condition).is_some() {
            return Err(DumpError::Validation(format!("prompt {} assigned twice", a.prompt_id)).into());
        }
    }
    if by_id.len() != dump.prompts.len() {
        return Err(DumpError::Validation(format!(
            "{} condition assignments for {} prompts",
            by_id.len(),
            dump.prompts.len()
        ))
        .into());
    }
    let mut rows = ConditionRows {
        ambiguous: Vec::new(),
        unambiguous: Vec::new(),
        condition: Vec::new(),
    };
    for (i, p) in dump.prompts.iter().enumerate() {
        let c = *by_id
            .get(p.prompt_id.as_str())
            .ok_or_else(|| DumpError::Validation(format!("prompt {} has no condition", p.prompt_id)))?;
        match c {
            Condition::Ambiguous => rows.ambiguous.push(i),
            Condition::Unambiguous => rows.unambiguous.push(i),
            Condition::Excluded => {}
        }
        rows.condition.push(c);
    }
    Ok(rows)
}

fn require_both(rows: &ConditionRows) -> Result<(), ToolError> {
    for (name, r) in [("ambiguous", &rows.ambiguous), ("unambiguous", &rows.unambiguous)] {
        if r.len() < 2 {
            return Err(ToolError::Config(format!(
                "the {name} condition has {} prompts; at least 2 are needed",
                r.len()
            )));
        }
    }
    Ok(())
}

fn load_sae(sae_dir: &Path, layer: usize) -> Result<Option<SaeParams>, ToolError> {
    let dir = sae_dir.join(format!("layer_{layer}"));
    if !dir.join(dump::MANIFEST_FILE).exists() {
        return Ok(None);
    }
    let sae = read_sae(&dir)?;
    if sae.layer_index != layer {
        return Err(
            DumpError::Validation(format!("{} holds the SAE for layer {}", dir.display(), sae.layer_index)).into(),
        );
    }
    Ok(Some(sae))
}

fn require_sae(sae_dir: &Path, layer: usize) -> Result<SaeParams, ToolError> {
    load_sae(sae_dir, layer)?
        .ok_or_else(|| DumpError::MissingFile(sae_dir.join(format!("layer_{layer}")).join(dump::MANIFEST_FILE)).into())
}

fn rivalry_scan(ctx: &mut Ctx, inputs: &DataArgs) -> Result<Value, ToolError> {
    let dump = read_dump(&ctx.input("data", &inputs.data, ACTIVATIONS_DIR))?;
    let sae_dir = ctx.input("sae_dir", &inputs.sae_dir, SAE_DIR);
    let rows = condition_rows(&dump, &ctx.input("conditions", &inputs.conditions, CONDITIONS_FILE))?;
    require_both(&rows)?;
    let layers = ctx.config.layers.clone();
    if let Some(l) = layers.iter().find(|l| !dump.manifest.layers.contains(l)) {
        return Err(ToolError::Config(format!("layer {l} is not in the activation dump")));
    }
    let mut per_layer = Vec::with_capacity(layers.len());
    for &layer in &layers {
        let hidden = dump.activations(layer)?;
        per_layer.push((
            layer,
            load_sae(&sae_dir, layer)?,
            hidden.select_rows(&rows.ambiguous),
            hidden.select_rows(&rows.unambiguous),
        ));
    }
    let inputs: Vec<LayerInput<'_>> = per_layer
        .iter()
        .map(|(layer, sae, amb, unamb)| LayerInput {
            layer: *layer,
            sae: sae.as_ref(),
            ambiguous: amb,
            unambiguous: unamb,
        })
        .collect();
    let report = layer_scan(&inputs, &ctx.scan_config())?;
    let summary = json!({
        "layers_scanned": report.bonferroni_factor,
        "significant_layers": report.significant_layers(),
    });
    ctx.report(REPORT_FILE, &report)?;
    Ok(summary)
}

fn peak_from_report(report: &RivalryReport) -> Result<PeakLayer, ToolError> {
    let layer = select_peak_layer(report)?;
    let r = report.layer(layer).expect("peak layer was scanned");
    Ok(PeakLayer {
        layer,
        rivalry_gap: r.rivalry_gap(),
        significant: r.significant,
        direction_correct: r.direction_correct,
    })
}

fn peak_layer(ctx: &mut Ctx, report: &Option<PathBuf>) -> Result<Value, ToolError> {
    let path = ctx.input("report", report, REPORT_FILE);
    let report: Report<RivalryReport> = read_report(&path)?;
    let peak = peak_from_report(&report.result)?;
    let summary = json!({ "layer": peak.layer, "rivalry_gap": peak.rivalry_gap });
    ctx.report(PEAK_FILE, peak)?;
    Ok(summary)
}

fn rival_pairs(
    ctx: &mut Ctx,
    inputs: &DataArgs,
    report: &Option<PathBuf>,
    layer: Option<usize>,
) -> Result<Value, ToolError> {
    let report: Report<RivalryReport> = read_report(&ctx.input("report", report, REPORT_FILE))?;
    let layer = match layer {
        Some(l) => l,
        None => select_peak_layer(&report.result)?,
    };
    let scanned = report
        .result
        .layer(layer)
        .ok_or_else(|| ToolError::Config(format!("layer {layer} was not scanned in the report")))?;
    let dump = read_dump(&ctx.input("data", &inputs.data, ACTIVATIONS_DIR))?;
    let sae_dir = ctx.input("sae_dir", &inputs.sae_dir, SAE_DIR);
    let rows = condition_rows(&dump, &ctx.input("conditions", &inputs.conditions, CONDITIONS_FILE))?;
    require_both(&rows)?;
    let sae = require_sae(&sae_dir, layer)?;
    let hidden = dump.activations(layer)?.select_rows(&rows.ambiguous);
    let corr = rivalry::condition_correlations(&hidden, &sae, &scanned.selection)?;
    let top = rivalry::top_rival_pairs(&corr, ctx.config.pair_count)?;
    let summary = json!({ "layer": layer, "pairs": top.pairs.len(), "warning": top.warning });
    ctx.report(
        PAIRS_FILE,
        RivalPairsResult {
            layer,
            condition: Condition::Ambiguous,
            selected_feature_count: scanned.selection.selected_feature_ids.len(),
            excluded_features: corr.excluded_features,
            top,
        },
    )?;
    Ok(summary)
}

fn emit_plan(ctx: &mut Ctx, inputs: &DataArgs, pairs: &Option<PathBuf>) -> Result<Value, ToolError> {
    let pairs: Report<RivalPairsResult> = read_report(&ctx.input("pairs", pairs, PAIRS_FILE))?;
    let layer = pairs.result.layer;
    let dump = read_dump(&ctx.input("data", &inputs.data, ACTIVATIONS_DIR))?;
    let sae = require_sae(&ctx.input("sae_dir", &inputs.sae_dir, SAE_DIR), layer)?;
    let rows = condition_rows(&dump, &ctx.input("conditions", &inputs.conditions, CONDITIONS_FILE))?;
    let ambiguous: Vec<String> = rows
        .ambiguous
        .iter()
        .map(|&i| dump.prompts[i].prompt_id.clone())
        .collect();
    if ambiguous.is_empty() {
        return Err(ToolError::Config("no ambiguous prompts to steer".into()));
    }
    let prompt_ids = steering::sample_prompt_ids(
        &ambiguous,
        ctx.config.prompts_per_pair,
        ctx.config.stage_seed("plan-prompts"),
    );
    let plan_config = PlanConfig {
        multipliers: ctx.config.multipliers.clone(),
        random_vector_count: ctx.config.random_vector_count,
        random_seed: ctx.config.stage_seed("baseline-vector"),
        generation: ctx.config.generation.clone(),
    };
    let plan = build_plan(&pairs.result.top.pairs, &sae, layer, prompt_ids, &plan_config)?;
    let by_id: BTreeMap<&str, &PromptRecord> = dump.prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
    let records = plan.prompt_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
    let dir = ctx.output(PLAN_DIR);
    write_plan(&dir, &plan, &dump.manifest.model_id, records)?;
    Ok(json!({
        "layer": layer,
        "pairs": plan.pairs.len(),
        "prompts": plan.prompt_ids.len(),
        "entries": plan.entries().len(),
    }))
}

fn csv_number(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        v.to_string()
    }
}

fn csv_option(v: Option<f64>) -> String {
    v.map(csv_number).unwrap_or_default()
}

fn write_text(ctx: &mut Ctx, name: &str, text: &str) -> Result<(), ToolError> {
    let path = ctx.output(name);
    fs::write(&path, text).map_err(|e| DumpError::io(&path, e))?;
    Ok(())
}

fn flip_rate(ctx: &mut Ctx, records: &Option<PathBuf>, pairs: &Option<PathBuf>) -> Result<Value, ToolError> {
    let records: Vec<GenerationRecord> = read_records(&ctx.input("records", records, GENERATIONS_FILE))?;
    let pairs: Report<RivalPairsResult> = read_report(&ctx.input("pairs", pairs, PAIRS_FILE))?;
    let table = flip_rate_analysis(&records, ctx.config.output_comparison)?;
    let gaps = gap_vs_strength(&table, &pairs.result.top.pairs)?;

    let mut csv = String::from("pair_id,multiplier,correlation,flip_rate_rivalry,flip_rate_random,gap,prompt_count\n");
    for (row, g) in table.rows.iter().zip(&gaps.rows) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.pair_id,
            csv_number(row.multiplier),
            csv_number(g.correlation),
            csv_number(row.flip_rate_rivalry),
            csv_number(row.flip_rate_random),
            csv_number(row.gap),
            row.prompt_count
        );
    }
    let summary = json!({
        "by_multiplier": table.summary.iter().map(|s| json!({
            "multiplier": s.multiplier,
            "mean_gap": s.mean_gap,
            "wins": s.wins,
            "pairs": s.pair_count,
        })).collect::<Vec<_>>(),
    });
    ctx.report(
        FLIP_RATE_FILE,
        FlipRateResult {
            table,
            gap_vs_strength: gaps,
        },
    )?;
    write_text(ctx, FLIP_RATE_CSV, &csv)?;
    Ok(summary)
}

fn score_prompts(ctx: &mut Ctx, inputs: &DataArgs) -> Result<Value, ToolError> {
    let layer = ctx.config.score_layer;
    let dump = read_dump(&ctx.input("data", &inputs.data, ACTIVATIONS_DIR))?;
    let sae = require_sae(&ctx.input("sae_dir", &inputs.sae_dir, SAE_DIR), layer)?;
    let rows = condition_rows(&dump, &ctx.input("conditions", &inputs.conditions, CONDITIONS_FILE))?;
    let kept: Vec<usize> = (0..dump.prompts.len())
        .filter(|&i| rows.condition[i] != Condition::Excluded)
        .collect();
    let hidden = dump.activations(layer)?.select_rows(&kept);
    let scored = rivalry::per_prompt_rivalry_scores(
        &hidden,
        &sae,
        ctx.config.top_n_features,
        ctx.config.activation_threshold,
    )?;
    let mut records = Vec::with_capacity(kept.len());
    let mut scores = Vec::with_capacity(kept.len());
    for (&i, rivalry) in kept.iter().zip(scored) {
        let p = &dump.prompts[i];
        let missing = |field: &str| DumpError::Validation(format!("prompt {} has no {field}", p.prompt_id));
        let output = p
            .generated_output
            .as_deref()
            .ok_or_else(|| missing("generated_output"))?;
        let confidence = p
            .top_token_probability
            .ok_or_else(|| missing("top_token_probability"))?;
        records.push(UncertaintyRecord {
            prompt_id: p.prompt_id.clone(),
            rivalry_score: rivalry.score,
            softmax_confidence: confidence,
            correct: label_correct(output, &p.ground_truth_answers),
            condition: rows.condition[i],
        });
        scores.push(PromptScore {
            prompt_id: p.prompt_id.clone(),
            condition: rows.condition[i],
            rivalry,
        });
    }
    let undefined = records.iter().filter(|r| r.rivalry_score.is_none()).count();
    let path = ctx.output(UNCERTAINTY_FILE);
    write_records(&path, &records)?;
    let excluded_prompts = dump.prompts.len() - kept.len();
    ctx.report(
        SCORES_FILE,
        PromptScores {
            layer,
            excluded_prompts,
            scores,
        },
    )?;
    Ok(json!({
        "layer": layer,
        "scored": records.len() - undefined,
        "undefined": undefined,
        "excluded_prompts": excluded_prompts,
    }))
}

fn roc_rows(csv: &mut String, signal: &str, points: &[RocPoint]) {
    for p in points {
        let _ = writeln!(
            csv,
            "{signal},{},{},{}",
            csv_number(p.threshold),
            csv_number(p.false_positive_rate),
            csv_number(p.true_positive_rate)
        );
    }
}

fn calibration_rows(csv: &mut String, signal: &str, bins: &[CalibrationBin]) {
    for b in bins {
        let _ = writeln!(
            csv,
            "{signal},{},{},{},{},{}",
            csv_number(b.lower),
            csv_number(b.upper),
            b.count,
            csv_option(b.mean_score),
            csv_option(b.accuracy)
        );
    }
}

fn evaluate(ctx: &mut Ctx, records: &Option<PathBuf>) -> Result<Value, ToolError> {
    let records: Vec<UncertaintyRecord> = read_records(&ctx.input("records", records, UNCERTAINTY_FILE))?;
    let comparison: SignalComparison = compare_signals(&records, ctx.config.bin_count)?;
    let mut roc = String::from("signal,threshold,false_positive_rate,true_positive_rate\n");
    roc_rows(&mut roc, "rivalry", &comparison.roc_rivalry);
    roc_rows(&mut roc, "softmax", &comparison.roc_softmax);
    let mut cal = String::from("signal,lower,upper,count,mean_score,accuracy\n");
    calibration_rows(&mut cal, "rivalry", &comparison.calibration_rivalry);
    calibration_rows(&mut cal, "softmax", &comparison.calibration_softmax);
    let summary = json!({
        "records": comparison.record_count,
        "excluded": comparison.excluded_count,
        "auroc_rivalry": comparison.auroc_rivalry,
        "auroc_softmax": comparison.auroc_softmax,
    });
    ctx.report(EVALUATION_FILE, comparison)?;
    write_text(ctx, ROC_CSV, &roc)?;
    write_text(ctx, CALIBRATION_CSV, &cal)?;
    Ok(summary)
}

fn synth_dataset(ctx: &mut Ctx, prompt_count: Option<usize>, hidden_dim: Option<usize>) -> Result<Value, ToolError> {
    let mut cfg = ctx.config.synth_dataset.clone();
    if let Some(n) = prompt_count {
        cfg.prompt_count = n;
    }
    if let Some(d) = hidden_dim {
        cfg.hidden_dim = d;
    }
    cfg.seed ^= ctx.config.stage_seed("synth-dataset");
    let ds = synth::gen_dataset(&cfg)?;

    let prompts: Vec<PromptRecord> = ds
        .prompts
        .iter()
        .map(|p| PromptRecord {
            prompt_id: p.prompt_id.clone(),
            text: p.text.clone(),
            ground_truth_answers: p.ground_truth_answers.clone(),
            sampled_first_words: Some(p.sampled_first_words.clone()),
            generated_output: Some(p.generated_output.clone()),
            top_token_probability: Some(p.top_token_probability),
        })
        .collect();
    let mut tensors = BTreeMap::new();
    for l in &ds.layers {
        tensors.insert(activation_name(l.layer), Tensor::from(l.hidden.clone()));
    }
    let layers: Vec<usize> = ds.layers.iter().map(|l| l.layer).collect();
    let dump = Dump::new("synthetic", layers.clone(), cfg.hidden_dim, tensors, prompts)?;
    write_dump(&ctx.output(ACTIVATIONS_DIR), &dump)?;
    let sae_root = ctx.output(SAE_DIR);
    for l in &ds.layers {
        write_sae(&sae_root.join(format!("layer_{}", l.layer)), &l.sae)?;
    }
    let ids = |c: Condition| -> Vec<String> {
        ds.prompts
            .iter()
            .filter(|p| p.intended_condition == c)
            .map(|p| p.prompt_id.clone())
            .collect()
    };
    let truth = SynthTruth {
        dataset: cfg.clone(),
        ambiguous_prompt_ids: ids(Condition::Ambiguous),
        unambiguous_prompt_ids: ids(Condition::Unambiguous),
    };
    ctx.report(SYNTH_TRUTH_FILE, truth)?;
    Ok(json!({
        "prompts": cfg.prompt_count,
        "hidden_dim": cfg.hidden_dim,
        "layers": layers,
        "planted_layers": cfg.planted_layers,
    }))
}

fn synth_generation_records(ctx: &mut Ctx, plan: &Option<PathBuf>) -> Result<Value, ToolError> {
    let (plan, _) = read_plan(&ctx.input("plan", plan, PLAN_DIR))?;
    let mut cfg = ctx.config.synth_records.clone();
    cfg.seed ^= ctx.config.stage_seed("synth-generation-records");
    let records = synth::gen_generation_records(&plan.entries(), &cfg)?;
    let path = ctx.output(GENERATIONS_FILE);
    write_records(&path, &records)?;
    Ok(json!({ "records": records.len() }))
}

fn synth_uncertainty(ctx: &mut Ctx) -> Result<Value, ToolError> {
    let mut cfg = ctx.config.synth_uncertainty.clone();
    cfg.seed ^= ctx.config.stage_seed("synth-uncertainty-records");
    let records = synth::gen_uncertainty_records(&cfg)?;
    let path = ctx.output(UNCERTAINTY_FILE);
    write_records(&path, &records)?;
    Ok(json!({ "records": records.len() }))
}

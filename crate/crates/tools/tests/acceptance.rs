// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero if any criterion fails.
//!
//! Oracles here are written independently of the library code they check.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rivalry_core::entropy::{response_entropy, split_conditions, Condition, FirstWordRule, SplitConfig};
use rivalry_core::evaluate::UncertaintyRecord;
use rivalry_core::rivalry::{
    layer_scan, pairwise_correlations, scan_layer, top_rival_pairs, LayerInput, RivalPair, ScanConfig,
};
use rivalry_core::stats::{self, Direction};
use rivalry_core::steering::{
    baseline_vector, flip_rate_analysis, gap_vs_strength, rivalry_axis, GenerationRecord, OutputComparison,
    BASELINE_VECTOR_ID, UNSTEERED_ID,
};
use rivalry_core::synth::{self, PlantedRivalryConfig};
use rivalry_core::{FeatureActivations, Matrix, SaeParams};
use rivalry_tools::artifacts::{read_json, read_plan, read_records, read_sae};
use rivalry_tools::cli::{self, FlipRateResult, PeakLayer, Report, RivalPairsResult, RunManifest, SynthTruth};
use rivalry_tools::dump::read_dump;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn to_f32(m: &Matrix<f64>) -> Matrix<f32> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&v| v as f32).collect()).unwrap()
}

// ---------------------------------------------------------------- oracles

/// Single-pass raw-sum Pearson correlation.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Linear interpolation of the order statistics placed at `i / (n - 1)`.
fn percentile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let step = 1.0 / (n - 1) as f64;
    for i in 0..n - 1 {
        let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
        if q <= hi || i == n - 2 {
            let t = ((q - lo) / step).clamp(0.0, 1.0);
            return v[i] * (1.0 - t) + v[i + 1] * t;
        }
    }
    unreachable!()
}

/// Counts every positive/negative pair.
fn auroc_oracle(labels: &[bool], scores: &[f64]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    credit / pairs
}

// ------------------------------------------------------------- criteria

fn statistical_kernels() -> Outcome {
    const INSTANCES: usize = 1000;
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut auroc_mismatch = 0;

    for _ in 0..INSTANCES {
        let n = r.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + r.random_range(-5.0..5.0)).collect();
        worst = worst.max((stats::pearson(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs());
    }
    for _ in 0..INSTANCES {
        let (n, k) = (r.random_range(3..40), r.random_range(2..12));
        let data: Vec<f64> = (0..n * k).map(|_| r.random_range(0.0..3.0)).collect();
        let m = Matrix::from_vec(n, k, data).unwrap();
        let f = FeatureActivations::new(m.clone()).unwrap();
        let ids: Vec<usize> = (0..k).collect();
        let corr = pairwise_correlations(&f, &ids).unwrap();
        let mut idx = 0;
        for a in 0..k {
            for b in a + 1..k {
                assert_eq!(corr.pairs[idx], (a, b));
                worst = worst.max((corr.values[idx] - pearson_oracle(&m.column(a), &m.column(b))).abs());
                idx += 1;
            }
        }
        assert_eq!(idx, corr.len());
    }
    for _ in 0..INSTANCES {
        let n = r.random_range(1..80);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let q = if r.random_bool(0.1) {
            [0.0, 0.05, 1.0][r.random_range(0..3)]
        } else {
            r.random::<f64>()
        };
        worst = worst.max((stats::percentile(&v, q).unwrap() - percentile_oracle(&v, q)).abs());
    }
    for _ in 0..INSTANCES {
        let n = r.random_range(2..80);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // a coarse grid forces ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) / 4.0).collect();
        if stats::auroc(&labels, &scores).unwrap() != auroc_oracle(&labels, &scores) {
            auroc_mismatch += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && auroc_mismatch == 0 && elapsed < Duration::from_secs(30),
        format!(
            "4x{INSTANCES} instances, max |diff| {worst:.1e} (tol 1e-10), AUROC mismatches {auroc_mismatch}, {:.2}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn mann_whitney_enumeration() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0, 0);
    let mut failing = BTreeSet::new();
    let mut direction_errors = 0;
    for n in 2..=8usize {
        for n1 in 1..n {
            let n2 = n - n1;
            let subsets: Vec<u32> = (0u32..1 << n).filter(|m| m.count_ones() as usize == n1).collect();
            let rank_sum = |mask: u32| -> f64 { (0..n).filter(|i| mask >> i & 1 == 1).map(|i| (i + 1) as f64).sum() };
            let u_of = |mask: u32| rank_sum(mask) - (n1 * (n1 + 1)) as f64 / 2.0;
            let mean_u = (n1 * n2) as f64 / 2.0;
            let all_u: Vec<f64> = subsets.iter().map(|&m| u_of(m)).collect();
            for &mask in &subsets {
                let a: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| (i + 1) as f64).collect();
                let b: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| (i + 1) as f64).collect();
                let dev = (u_of(mask) - mean_u).abs();
                let exact =
                    all_u.iter().filter(|&&u| (u - mean_u).abs() >= dev - 1e-9).count() as f64 / subsets.len() as f64;
                let res = stats::mann_whitney(&a, &b).unwrap();
                let diff = (res.p_value_two_sided - exact).abs();
                if diff > worst.0 {
                    worst = (diff, n1, n2);
                }
                if diff > 0.05 {
                    failing.insert((n1, n2));
                }
                let expected_rank_sum = (n1 * (n + 1)) as f64 / 2.0;
                let expected = match rank_sum(mask).partial_cmp(&expected_rank_sum).unwrap() {
                    std::cmp::Ordering::Less => Direction::ALower,
                    std::cmp::Ordering::Greater => Direction::BLower,
                    std::cmp::Ordering::Equal => Direction::None,
                };
                if res.direction != expected {
                    direction_errors += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failing.is_empty() && direction_errors == 0 && elapsed < Duration::from_secs(10),
        format!(
            "max |dp| {:.4} at (n1,n2)=({},{}) (tol 0.05); sizes over tolerance {:?}; direction mismatches {direction_errors}; {:.2}s (< 10s)",
            worst.0,
            worst.1,
            worst.2,
            failing,
            elapsed.as_secs_f64()
        ),
    )
}

fn entropy_correctness() -> Outcome {
    let rule = FirstWordRule::default();
    let constant = vec!["Paris"; 20];
    let distinct: Vec<String> = (0..20).map(|i| format!("word{i}")).collect();
    let split: Vec<&str> = (0..20).map(|i| if i < 10 { "Paris" } else { "Lyon" }).collect();
    let h0 = response_entropy(&constant, rule).unwrap();
    let h1 = response_entropy(&distinct, rule).unwrap();
    let hs = response_entropy(&split, rule).unwrap();
    let expected = 2f64.ln() / 20f64.ln();

    let population = synth::gen_bimodal_entropy_population(400, 3).unwrap();
    let samples: Vec<(String, Vec<String>)> = population
        .iter()
        .map(|p| (p.prompt_id.clone(), p.completions.clone()))
        .collect();
    let assigned = split_conditions(&samples, &SplitConfig::default()).unwrap();
    let intended = population
        .iter()
        .zip(&assigned)
        .filter(|(p, a)| {
            a.condition
                == if p.high_entropy {
                    Condition::Ambiguous
                } else {
                    Condition::Unambiguous
                }
        })
        .count();
    let fraction = intended as f64 / population.len() as f64;
    outcome(
        h0 == 0.0 && (h1 - 1.0).abs() <= 1e-12 && (hs - expected).abs() <= 1e-12 && fraction >= 0.95,
        format!(
            "H(constant)={h0}, H(distinct)={h1}, |H(10/10) - ln2/ln20|={:.1e}, bimodal split {intended}/400 intended (>= 95%)",
            (hs - expected).abs()
        ),
    )
}

fn planted_pairs(seed: u64) -> Vec<(usize, usize, f64)> {
    // spread over the feature range, different per seed
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = Vec::new();
    while ids.len() < 10 {
        let f = r.random_range(0..300);
        if !ids.contains(&f) {
            ids.push(f);
        }
    }
    ids.chunks(2).map(|c| (c[0].min(c[1]), c[0].max(c[1]), -0.7)).collect()
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let sae = synth::identity_sae(300, 0, 0).unwrap();
    let mut recovered_min = usize::MAX;
    let mut flagged = 0;
    let mut worst_p: f64 = 0.0;
    for seed in 0..20u64 {
        let plants = planted_pairs(500 + seed);
        let planted = synth::gen_planted_rivalry(&PlantedRivalryConfig {
            prompt_count: 200,
            feature_count: 300,
            planted_pairs: plants.clone(),
            seed: 1000 + 2 * seed,
            ..Default::default()
        })
        .unwrap();
        let plain = synth::gen_planted_rivalry(&PlantedRivalryConfig {
            prompt_count: 200,
            feature_count: 300,
            seed: 1001 + 2 * seed,
            ..Default::default()
        })
        .unwrap();

        let ids: Vec<usize> = (0..300).collect();
        let corr = pairwise_correlations(&planted.activations, &ids).unwrap();
        let top = top_rival_pairs(&corr, 5).unwrap();
        let found: BTreeSet<(usize, usize)> = top.pairs.iter().map(|p| (p.feature_a, p.feature_b)).collect();
        let hits = plants.iter().filter(|(a, b, _)| found.contains(&(*a, *b))).count();
        recovered_min = recovered_min.min(hits);

        let (amb, unamb) = (to_f32(planted.activations.values()), to_f32(plain.activations.values()));
        let report = layer_scan(
            &[LayerInput {
                layer: 0,
                sae: Some(&sae),
                ambiguous: &amb,
                unambiguous: &unamb,
            }],
            &ScanConfig::default(),
        )
        .unwrap();
        let layer = report.layer(0).unwrap();
        worst_p = worst_p.max(layer.p_bonferroni);
        if layer.direction_correct && layer.p_bonferroni < 0.05 {
            flagged += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        recovered_min >= 4 && flagged >= 18 && elapsed < Duration::from_secs(60),
        format!(
            "min planted pairs recovered {recovered_min}/5 (>= 4), scan flagged {flagged}/20 (>= 18, largest adjusted p {worst_p:.3}), {:.1}s (< 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn null_calibration() -> Outcome {
    let layers = rivalry_core::DEFAULT_LAYERS;
    let sae = synth::identity_sae(300, 0, 0).unwrap();
    let mut runs_with_significant = 0;
    for run in 0..20u64 {
        let mut mats = Vec::new();
        for (i, _) in layers.iter().enumerate() {
            let draw = |c: u64| {
                let out = synth::gen_planted_rivalry(&PlantedRivalryConfig {
                    seed: 50_000 + run * 1000 + i as u64 * 2 + c,
                    ..Default::default()
                })
                .unwrap();
                to_f32(out.activations.values())
            };
            mats.push((draw(0), draw(1)));
        }
        let inputs: Vec<LayerInput<'_>> = layers
            .iter()
            .zip(&mats)
            .map(|(&layer, (a, b))| LayerInput {
                layer,
                sae: Some(&sae),
                ambiguous: a,
                unambiguous: b,
            })
            .collect();
        let report = layer_scan(&inputs, &ScanConfig::default()).unwrap();
        assert_eq!(report.bonferroni_factor, 13);
        if !report.significant_layers().is_empty() {
            runs_with_significant += 1;
        }
    }
    outcome(
        runs_with_significant <= 2,
        format!("{runs_with_significant}/20 runs with a significant layer at alpha 0.05/13 (<= 2)"),
    )
}

fn steering_geometry() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let (mut worst_norm, mut worst_anti): (f64, f64) = (0.0, 0.0);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for case in 0..10_000u64 {
        let d = r.random_range(2..64);
        let k = 2;
        let w_dec: Vec<f32> = (0..d * k)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut r);
                (x * 10f64.powi(r.random_range(-3..3))) as f32
            })
            .collect();
        let sae = SaeParams::new(
            0,
            "",
            Matrix::zeros(k, d),
            vec![0.0; k],
            Matrix::from_vec(d, k, w_dec).unwrap(),
            vec![0.0; d],
        )
        .unwrap();
        let ab = rivalry_axis(&sae, 0, 1).unwrap();
        let ba = rivalry_axis(&sae, 1, 0).unwrap();
        worst_norm = worst_norm.max((norm(&ab) - 1.0).abs());
        worst_anti = worst_anti.max(ab.iter().zip(&ba).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max));
        let base = baseline_vector(d, r.random_range(1..=12), case).unwrap();
        worst_norm = worst_norm.max((norm(&base.vector) - 1.0).abs());
    }
    outcome(
        worst_norm <= 1e-6 && worst_anti <= 1e-7,
        format!("10000 cases: max |norm - 1| {worst_norm:.1e} (<= 1e-6), max antisymmetry residual {worst_anti:.1e} (<= 1e-7)"),
    )
}

fn record(prompt: usize, pair: &str, multiplier: f64, text: &str) -> GenerationRecord {
    GenerationRecord {
        prompt_id: format!("p{prompt:02}"),
        pair_id: pair.into(),
        multiplier,
        output_text: text.into(),
    }
}

fn flip_rate_arithmetic() -> Outcome {
    // 20 pairs x 50 prompts at multiplier 5. Pair k flips 5 + (k % 11)
    // prompts; the 20 rivalry rates average 0.20. The random direction
    // flips 7 of 50 prompts (0.14).
    let flips: Vec<usize> = (0..20).map(|k| 8 + k % 5).collect();
    let total: usize = flips.iter().sum();
    assert_eq!(total, 200);
    let mut records = Vec::new();
    for p in 0..50 {
        records.push(record(p, UNSTEERED_ID, 0.0, "Answer"));
        records.push(record(
            p,
            BASELINE_VECTOR_ID,
            5.0,
            if p < 7 { "Other" } else { " Answer " },
        ));
        for (k, &f) in flips.iter().enumerate() {
            records.push(record(
                p,
                &format!("{k}-{}", k + 100),
                5.0,
                if p < f { "Changed" } else { "Answer" },
            ));
        }
    }
    let table = flip_rate_analysis(&records, OutputComparison::default()).unwrap();
    let s = &table.summary[0];
    let means_exact = s.mean_flip_rate_rivalry == 0.20 && s.mean_flip_rate_random == 0.14 && s.mean_gap == 0.06;

    // pair 2 flips 10/50 against 7/50 random
    let one: Vec<GenerationRecord> = records
        .iter()
        .filter(|r| r.pair_id == UNSTEERED_ID || r.pair_id == BASELINE_VECTOR_ID || r.pair_id == "2-102")
        .cloned()
        .collect();
    let row = &flip_rate_analysis(&one, OutputComparison::default()).unwrap().rows[0];
    let row_exact = row.flip_rate_rivalry == 0.20 && row.flip_rate_random == 0.14 && row.gap == 0.06;

    // gaps: 15 pairs above the random rate, 5 at or below it
    let mut wins_records = Vec::new();
    for p in 0..50 {
        wins_records.push(record(p, UNSTEERED_ID, 0.0, "Answer"));
        wins_records.push(record(
            p,
            BASELINE_VECTOR_ID,
            5.0,
            if p < 7 { "Other" } else { "Answer" },
        ));
        for k in 0..20 {
            let f = if k < 15 { 8 + k % 5 } else { 7 - k % 3 };
            wins_records.push(record(
                p,
                &format!("{k}-{}", k + 100),
                5.0,
                if p < f { "Changed" } else { "Answer" },
            ));
        }
    }
    let pairs: Vec<RivalPair> = (0..20)
        .map(|k| RivalPair {
            feature_a: k,
            feature_b: k + 100,
            correlation: -0.2 - 0.01 * k as f64,
        })
        .collect();
    let wins_table = flip_rate_analysis(&wins_records, OutputComparison::default()).unwrap();
    let gaps = gap_vs_strength(&wins_table, &pairs).unwrap();
    let wins = gaps.win_counts[0].wins;
    outcome(
        means_exact && row_exact && wins == 15 && gaps.win_counts[0].pairs == 20,
        format!(
            "means rivalry {} random {} gap {}; single pair {} / {} / {}; win count {wins}/20 (expected 15)",
            s.mean_flip_rate_rivalry,
            s.mean_flip_rate_random,
            s.mean_gap,
            row.flip_rate_rivalry,
            row.flip_rate_random,
            row.gap
        ),
    )
}

fn performance() -> Outcome {
    let (features, dim, prompts) = (16_384usize, 2304usize, 200usize);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut gaussian = |n: usize, s: f64| -> Vec<f32> {
        (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut r);
                (x * s) as f32
            })
            .collect()
    };
    let sae = SaeParams::new(
        0,
        "benchmark",
        Matrix::from_vec(features, dim, gaussian(features * dim, scale)).unwrap(),
        vec![-1.5; features],
        Matrix::from_vec(dim, features, gaussian(features * dim, scale)).unwrap(),
        vec![0.0; dim],
    )
    .unwrap();
    let amb = Matrix::from_vec(prompts, dim, gaussian(prompts * dim, 1.0)).unwrap();
    let unamb = Matrix::from_vec(prompts, dim, gaussian(prompts * dim, 1.0)).unwrap();

    let time = |threads: usize, per_condition: usize| -> (f64, usize) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let a = Matrix::from_vec(per_condition, dim, amb.as_slice()[..per_condition * dim].to_vec()).unwrap();
        let u = Matrix::from_vec(per_condition, dim, unamb.as_slice()[..per_condition * dim].to_vec()).unwrap();
        pool.install(|| {
            let start = Instant::now();
            let layer = scan_layer(0, &sae, &a, &u, &ScanConfig::default()).unwrap();
            (start.elapsed().as_secs_f64(), layer.pair_count_ambiguous)
        })
    };
    // Gated workload: 200 prompts in each condition.
    let (single, pairs) = time(1, prompts);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (parallel, _) = time(cores, prompts);
    // Informational: 200 prompts encoded in total.
    let (half, _) = time(cores, prompts / 2);
    outcome(
        single < 5.0 && parallel < 1.0 && pairs == 44_850,
        format!(
            "layer with {prompts} prompts per condition, {pairs} pairs: 1 thread {single:.2}s (< 5s), {cores} thread(s) {parallel:.2}s (< 1s); {} per condition {half:.2}s",
            prompts / 2
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rivalry"))
        .args(args)
        .current_dir(dir)
        .env_remove("RIVALRY_DATA_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const PIPELINE: &[&[&str]] = &[
    &["synth"],
    &["split-entropy"],
    &["rivalry-scan"],
    &["peak-layer"],
    &["rival-pairs"],
    &["emit-steering-plan"],
    &["synth", "--kind", "generation-records"],
    &["flip-rate"],
    &["score-prompts"],
    &["evaluate"],
];

fn run_pipeline(dir: &Path) -> Result<Vec<String>, String> {
    PIPELINE.iter().map(|args| run_cli(dir, args)).collect()
}

fn validate_outputs(dir: &Path) -> Result<usize, String> {
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let dump = read_dump(&dir.join(cli::ACTIVATIONS_DIR)).map_err(|x| e(&x))?;
    for &layer in &dump.manifest.layers {
        read_sae(&dir.join(cli::SAE_DIR).join(format!("layer_{layer}"))).map_err(|x| e(&x))?;
    }
    let conditions: Vec<rivalry_core::entropy::ConditionAssignment> =
        read_records(&dir.join(cli::CONDITIONS_FILE)).map_err(|x| e(&x))?;
    if conditions.len() != dump.prompts.len() {
        return Err("condition count differs from prompt count".into());
    }
    let _: Report<SynthTruth> = cli::read_report(&dir.join(cli::SYNTH_TRUTH_FILE)).map_err(|x| e(&x))?;
    let scan: Report<rivalry_core::rivalry::RivalryReport> =
        cli::read_report(&dir.join(cli::REPORT_FILE)).map_err(|x| e(&x))?;
    let _: Report<PeakLayer> = cli::read_report(&dir.join(cli::PEAK_FILE)).map_err(|x| e(&x))?;
    let pairs: Report<RivalPairsResult> = cli::read_report(&dir.join(cli::PAIRS_FILE)).map_err(|x| e(&x))?;
    let (plan, _) = read_plan(&dir.join(cli::PLAN_DIR)).map_err(|x| e(&x))?;
    let generations: Vec<GenerationRecord> = read_records(&dir.join(cli::GENERATIONS_FILE)).map_err(|x| e(&x))?;
    if generations.len() != plan.entries().len() {
        return Err("generation records do not cover the plan".into());
    }
    let flips: Report<FlipRateResult> = cli::read_report(&dir.join(cli::FLIP_RATE_FILE)).map_err(|x| e(&x))?;
    if flips.result.table.rows.len() != pairs.result.top.pairs.len() * plan.multipliers.len() {
        return Err("flip-rate table size".into());
    }
    let _: Report<cli::PromptScores> = cli::read_report(&dir.join(cli::SCORES_FILE)).map_err(|x| e(&x))?;
    let uncertainty: Vec<UncertaintyRecord> = read_records(&dir.join(cli::UNCERTAINTY_FILE)).map_err(|x| e(&x))?;
    let evaluation: Report<rivalry_core::evaluate::SignalComparison> =
        cli::read_report(&dir.join(cli::EVALUATION_FILE)).map_err(|x| e(&x))?;
    if evaluation.result.record_count != uncertainty.len() {
        return Err("evaluation record count".into());
    }
    for (file, header) in [
        (
            cli::FLIP_RATE_CSV,
            "pair_id,multiplier,correlation,flip_rate_rivalry,flip_rate_random,gap,prompt_count",
        ),
        (cli::ROC_CSV, "signal,threshold,false_positive_rate,true_positive_rate"),
        (cli::CALIBRATION_CSV, "signal,lower,upper,count,mean_score,accuracy"),
    ] {
        let text = std::fs::read_to_string(dir.join(file)).map_err(|x| e(&x))?;
        let mut lines = text.lines();
        if lines.next() != Some(header) {
            return Err(format!("{file} header"));
        }
        let columns = header.split(',').count();
        if lines.any(|l| l.split(',').count() != columns) {
            return Err(format!("{file} row width"));
        }
    }
    let manifest: RunManifest = read_json(&dir.join(cli::RUN_MANIFEST)).map_err(|x| e(&x))?;
    let mut files = 0;
    for run in manifest.runs.values() {
        for f in &run.outputs {
            let len = std::fs::metadata(dir.join(&f.path)).map_err(|x| e(&x))?.len();
            if len != f.bytes {
                return Err(format!("{} size differs from run manifest", f.path));
            }
            files += 1;
        }
    }
    if manifest.runs.len() != PIPELINE.len() {
        return Err(format!("run manifest lists {} runs", manifest.runs.len()));
    }
    if scan.result.significant_layers().is_empty() {
        return Err("no planted layer was flagged".into());
    }
    Ok(files)
}

fn run_script(dir: &Path) -> Result<Vec<String>, String> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/model_free_pipeline.sh");
    let out = Command::new("sh")
        .arg(&script)
        .current_dir(dir)
        .env("RIVALRY", env!("CARGO_BIN_EXE_rivalry"))
        .env_remove("RIVALRY_DATA_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("pipeline script: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(str::to_owned)
        .collect())
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let result = run_script(dir.path()).and_then(|lines| {
        if lines.len() != PIPELINE.len() {
            return Err(format!("{} stage summaries, expected {}", lines.len(), PIPELINE.len()));
        }
        for l in &lines {
            let v: serde_json::Value = serde_json::from_str(l.trim()).map_err(|e| e.to_string())?;
            if v["status"] != "ok" {
                return Err(format!("summary {l}"));
            }
        }
        validate_outputs(dir.path())
    });
    let elapsed = start.elapsed();
    match result {
        Ok(files) => outcome(
            elapsed < Duration::from_secs(120),
            format!(
                "pipeline script ran {} stages, exit 0, {files} output files validated, {:.1}s (< 120s)",
                PIPELINE.len(),
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

fn all_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            all_files(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = run_pipeline(a.path()).and_then(|_| run_pipeline(b.path())) {
        return outcome(false, e);
    }
    // and a rerun of every stage in place
    let before = snapshot(a.path());
    if let Err(e) = run_pipeline(a.path()) {
        return outcome(false, e);
    }
    let again = snapshot(a.path());
    let other = snapshot(b.path());
    let differing: Vec<String> = before
        .iter()
        .filter(|(name, bytes)| other.get(*name) != Some(*bytes) || again.get(*name) != Some(*bytes))
        .map(|(name, _)| name.clone())
        .collect();
    outcome(
        differing.is_empty() && before.len() == other.len() && before.len() == again.len(),
        format!(
            "{} files compared across reruns, {} differ {:?}",
            before.len(),
            differing.len(),
            differing
        ),
    )
}

fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = Vec::new();
    all_files(dir, &mut files);
    files
        .into_iter()
        .map(|f| {
            (
                f.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&f).unwrap(),
            )
        })
        .collect()
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("statistical kernels vs brute force", statistical_kernels),
        ("Mann-Whitney vs exhaustive enumeration", mann_whitney_enumeration),
        ("entropy correctness", entropy_correctness),
        ("planted-rivalry recovery", planted_recovery),
        ("null calibration", null_calibration),
        ("steering geometry", steering_geometry),
        ("flip-rate arithmetic", flip_rate_arithmetic),
        ("performance", performance),
        ("end-to-end model-free pipeline", end_to_end),
        ("determinism", determinism),
    ];
    // optional substring filters, e.g. `-- performance`
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "acceptance {} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance summary: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

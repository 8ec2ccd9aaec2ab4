//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion that could be evaluated failed.
//!
//! Criterion 10 needs the public 328-image component dataset and a small
//! task-specific source dataset, both as `root/<class>/*.png|jpg` folders:
//!
//! ```text
//! VOLTAVISION_TARGET_DATA=/path/to/target VOLTAVISION_SOURCE_DATA=/path/to/source \
//!     cargo test --release -p voltavision --test acceptance
//! ```
//!
//! Without them the criterion is reported as FAIL (blocked) and a synthetic
//! stand-in of the same shape runs for information only.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltavision::data::{kfold_split, load_image_folder_with, LabeledDataset, PreprocessConfig};
use voltavision::eval::{compute_metrics, cross_validate, format_table, ConfusionMatrix, MetricsReport};
use voltavision::model::{encode_checkpoint, load_checkpoint, save_checkpoint};
use voltavision::train::{fit, gradient_check, step_lr, DatasetSplit, GradProbe, NetworkScope, TrainConfig};
use voltavision::{build_voltavision, ArchitectureConfig, ModelGraph, Shape4, TrainablePolicy};

enum Outcome {
    Pass(String),
    Fail(String),
    /// Could not be evaluated in this environment.
    Blocked(String),
}

type Check = fn() -> Outcome;

const CLASS_COUNTS: [usize; 5] = [3, 5, 10, 36, 100];

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn parameter_counts() -> Outcome {
    let expected = [30_039, 44_441, 80_446, 267_672, 728_536];
    let got: Vec<usize> = CLASS_COUNTS
        .iter()
        .map(|&c| build_voltavision(c, 0).unwrap().count_parameters().trainable)
        .collect();
    check(got == expected, format!("trainable {got:?}, expected {expected:?}"))
}

fn model_sizes() -> Outcome {
    let reference = [127e3, 185e3, 320e3, 1.08e6, 2.92e6];
    let mut ok = true;
    let mut parts = Vec::new();
    for (&c, &r) in CLASS_COUNTS.iter().zip(&reference) {
        let bytes = encode_checkpoint(&build_voltavision(c, 0).unwrap()).len() as f64;
        let dev = (bytes - r) / r;
        ok &= dev.abs() <= 0.10;
        parts.push(format!("C={c}: {bytes} B ({:+.1}%)", 100.0 * dev));
    }
    check(ok, parts.join(", "))
}

fn gradient_suite() -> Outcome {
    let small = Shape4::new(2, 4, 8, 8);
    let full = Shape4::new(2, 3, 32, 32);
    let probes = [
        ("conv", GradProbe::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 2 }, small, 1e-4),
        ("batchnorm", GradProbe::BatchNorm, small, 1e-4),
        ("maxpool", GradProbe::MaxPool { kernel: 3, stride: 3 }, small, 1e-4),
        ("relu", GradProbe::Relu, small, 1e-6),
        ("linear", GradProbe::Linear { out_features: 5 }, small, 1e-6),
        ("network/head", GradProbe::Network { num_classes: 3, scope: NetworkScope::Head }, full, 1e-4),
        ("network/all", GradProbe::Network { num_classes: 3, scope: NetworkScope::All }, full, 1e-4),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, probe, shape, tol) in probes {
        match gradient_check(probe, shape, 17, 32) {
            Ok(r) => {
                ok &= r.max_relative_error < tol;
                parts.push(format!("{name} {:.1e}", r.max_relative_error));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    check(ok, parts.join(", "))
}

fn schedule() -> Outcome {
    let history: Vec<f64> = (0..25).map(|e| step_lr(1e-3, 7, 0.1, e)).collect();
    let expected: Vec<f64> = [(1e-3, 7), (1e-4, 7), (1e-5, 7), (1e-6, 4)]
        .iter()
        .flat_map(|&(lr, n)| std::iter::repeat_n(lr, n))
        .collect();
    let ok = history
        .iter()
        .zip(&expected)
        .all(|(a, b)| ((a - b) / b).abs() < 1e-12);
    check(ok, format!("25 epochs, lr at epochs 0/7/14/21 = {:e}/{:e}/{:e}/{:e}", history[0], history[7], history[14], history[21]))
}

fn overfit() -> Outcome {
    let data = common::separable_dataset(&[10, 10, 10], 3);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut model = build_voltavision(3, 0).unwrap();
    let cfg = TrainConfig {
        base_lr: 0.01,
        trainable_policy: TrainablePolicy::All,
        ..TrainConfig::default()
    };
    match fit(&mut model, DatasetSplit::new(&data, &idx), &cfg) {
        Ok(h) => {
            let last = h.last().unwrap().train;
            check(
                last.mean_loss < 0.05,
                format!("final train loss {:.2e} after {} epochs (limit 0.05)", last.mean_loss, h.len()),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn surgery_invariants() -> Outcome {
    let mut model = build_voltavision(100, 5).unwrap();
    model.set_provenance("synthetic 100-class source");
    let before = model.backbone_bytes();
    model.replace_head(3, 5).unwrap();
    let after_surgery = model.backbone_bytes() == before;

    let data = common::separable_dataset(&[20, 20, 20], 8);
    let idx: Vec<usize> = (0..data.len()).collect();
    let cfg = TrainConfig::default();
    if let Err(e) = fit(&mut model, DatasetSplit::new(&data, &idx), &cfg) {
        return Outcome::Fail(e.to_string());
    }
    let after_fit = model.backbone_bytes() == before;

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vvc");
    let b = dir.path().join("b.vvc");
    save_checkpoint(&model, &a).unwrap();
    save_checkpoint(&load_checkpoint(&a).unwrap(), &b).unwrap();
    let identical = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    check(
        after_surgery && after_fit && identical,
        format!(
            "backbone unchanged after surgery {after_surgery}, after {}-epoch head-only fit {after_fit}; save/load/save identical {identical}",
            cfg.epochs
        ),
    )
}

/// Independent tally over the expanded (truth, prediction) pairs.
fn brute_force(rows: &[Vec<u64>]) -> (f64, f64, f64, f64) {
    let c = rows.len();
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = pairs.iter().filter(|&&(t, p)| t == k && p == k).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != k && p == k).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == k && p != k).count() as f64;
        sp += if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        sr += if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        sf += if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
    }
    let n = c as f64;
    (correct as f64 / pairs.len() as f64, sp / n, sr / n, sf / n)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.gen_range(2..=8);
        let mut rows: Vec<Vec<u64>> = (0..c)
            .map(|_| (0..c).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..25) }).collect())
            .collect();
        rows[0][0] += 1;
        let m = compute_metrics(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        let (a, p, r, f) = brute_force(&rows);
        for (x, y) in [(m.accuracy, a), (m.precision, p), (m.recall, r), (m.f1, f)] {
            worst = worst.max((x - y).abs());
        }
    }
    let cm = ConfusionMatrix::from_rows(&[vec![8, 2, 0], vec![1, 9, 0], vec![0, 0, 10]]).unwrap();
    let f1 = compute_metrics(&cm).unwrap().f1;
    check(
        worst <= 1e-12 && (f1 - 0.8997).abs() < 5e-5,
        format!("max deviation over 100 matrices {worst:.1e}; worked example macro F1 {f1:.4}"),
    )
}

/// Labels in the target dataset's class proportions.
fn target_labels() -> (Vec<usize>, Vec<String>) {
    let names = ["Bluetooth Module", "Humidity Sensor", "Transistor"];
    let counts = [102, 116, 110];
    let labels = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    (labels, names.iter().map(|s| s.to_string()).collect())
}

fn cv_partition() -> Outcome {
    let (labels, names) = target_labels();
    let plan = voltavision::data::kfold_split_labels(&labels, &names, 5, 0).unwrap();
    let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let all: BTreeSet<usize> = plan.folds.iter().flatten().copied().collect();
    let disjoint = all.len() == plan.total();
    let mut stratified = true;
    for c in 0..names.len() {
        let per_fold: Vec<usize> = plan
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
            .collect();
        let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
        stratified &= hi - lo <= 1;
    }
    check(
        sizes == [66, 66, 66, 65, 65] && disjoint && stratified && plan.total() == 328 && all.len() == 328,
        format!("fold sizes {sizes:?}, disjoint {disjoint}, stratified within 1 {stratified}, validated {}", all.len()),
    )
}

/// The real target/source pair, if configured.
fn real_data() -> Option<Result<(LabeledDataset, LabeledDataset), String>> {
    let target = std::env::var_os("VOLTAVISION_TARGET_DATA")?;
    let source = std::env::var_os("VOLTAVISION_SOURCE_DATA");
    let cfg = PreprocessConfig::default();
    Some((|| {
        let source = source.ok_or("VOLTAVISION_SOURCE_DATA is not set")?;
        let t = load_image_folder_with(&target, Some(&cfg)).map_err(|e| e.to_string())?;
        let s = load_image_folder_with(&source, Some(&cfg)).map_err(|e| e.to_string())?;
        Ok((t, s))
    })())
}

/// Target dataset with the real class sizes but synthetic pixels.
fn synthetic_target() -> LabeledDataset {
    let (labels, names) = target_labels();
    let mut ds = common::noisy_dataset(&labels, names.len(), 3.0, 41);
    ds.class_names = names;
    ds
}

fn synthetic_source() -> LabeledDataset {
    let labels: Vec<usize> = (0..200).map(|i| i % 5).collect();
    common::noisy_dataset(&labels, 5, 3.0, 43)
}

fn pretrain(source: &LabeledDataset, seed: u64) -> ModelGraph {
    let mut model = ModelGraph::build(ArchitectureConfig::voltavision(source.num_classes()), seed).unwrap();
    let idx: Vec<usize> = (0..source.len()).collect();
    let cfg = TrainConfig {
        trainable_policy: TrainablePolicy::All,
        base_lr: 0.01,
        seed,
        ..TrainConfig::default()
    };
    fit(&mut model, DatasetSplit::new(source, &idx), &cfg).unwrap();
    model.set_provenance(format!("pretrained on {}", source.source));
    model
}

fn run_cv(pretrained: Option<&ModelGraph>, target: &LabeledDataset) -> MetricsReport {
    let plan = kfold_split(target, 5, 0).unwrap();
    let cfg = TrainConfig {
        trainable_policy: if pretrained.is_some() { TrainablePolicy::HeadOnly } else { TrainablePolicy::All },
        ..TrainConfig::default()
    };
    cross_validate(pretrained, target, &plan, &cfg).unwrap()
}

fn determinism() -> Outcome {
    let target = match real_data() {
        Some(Ok((t, _))) => t,
        _ => synthetic_target(),
    };
    let a = run_cv(None, &target).to_text();
    let b = run_cv(None, &target).to_text();
    check(
        a == b,
        format!("two 5-fold runs on {} ({} samples): {} report bytes, identical {}", target.source, target.len(), a.len(), a == b),
    )
}

fn comparison(target: &LabeledDataset, source: &LabeledDataset) -> (MetricsReport, MetricsReport, String) {
    let source_model = pretrain(source, 0);
    let transfer = run_cv(Some(&source_model), target);
    let scratch = run_cv(None, target);
    let table = format_table(&[transfer.table_row(&source.source), scratch.table_row("None")]);
    (transfer, scratch, table)
}

fn transfer_trend() -> Outcome {
    match real_data() {
        Some(Ok((target, source))) => {
            let (transfer, scratch, table) = comparison(&target, &source);
            print!("{table}");
            let chance = 1.0 / target.num_classes() as f64;
            check(
                transfer.mean.accuracy > chance && scratch.mean.accuracy > chance,
                format!(
                    "pretrained {:.2}% vs scratch {:.2}% (chance {:.2}%)",
                    100.0 * transfer.mean.accuracy,
                    100.0 * scratch.mean.accuracy,
                    100.0 * chance
                ),
            )
        }
        Some(Err(e)) => Outcome::Fail(format!("could not load the datasets: {e}")),
        None => {
            let (transfer, scratch, table) = comparison(&synthetic_target(), &synthetic_source());
            print!("synthetic stand-in (information only):\n{table}");
            Outcome::Blocked(format!(
                "the 328-image dataset is not available; set VOLTAVISION_TARGET_DATA and VOLTAVISION_SOURCE_DATA. \
                 Synthetic stand-in: pretrained {:.2}% vs scratch {:.2}%",
                100.0 * transfer.mean.accuracy,
                100.0 * scratch.mean.accuracy
            ))
        }
    }
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("parameter counts", parameter_counts),
        ("checkpoint sizes", model_sizes),
        ("gradient suite", gradient_suite),
        ("lr schedule", schedule),
        ("overfit smoke test", overfit),
        ("head surgery invariants", surgery_invariants),
        ("metrics oracle", metrics_oracle),
        ("cv partition", cv_partition),
        ("determinism", determinism),
        ("transfer vs scratch trend", transfer_trend),
    ];
    let mut failed = 0;
    let mut blocked = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Blocked(d) => {
                blocked += 1;
                ("FAIL", format!("blocked: {d}"))
            }
        };
        println!("{tag} [{:>2}] {name} ({secs:.1}s): {detail}", i + 1);
    }
    println!(
        "{} passed, {failed} failed, {blocked} blocked by missing data",
        criteria.len() - failed - blocked
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Confusion-matrix metrics and k-fold cross-validation.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{FoldPlan, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, ModelGraph};
use crate::tensor::Tensor;
use crate::train::{fit, softmax, DatasetSplit, TrainConfig};

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Data("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            cm.record(t, p).map_err(|_| Error::Label {
                sample: i,
                label: t.max(p),
                classes,
            })?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Label {
                sample: 0,
                label: truth.max(predicted),
                classes: self.classes,
            });
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Data("cannot merge confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy and macro-averaged precision/recall/F1, as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class ratios with `0/0` taken as 0, macro-averaged over all classes.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let c = cm.classes();
    let trace: u64 = (0..c).map(|i| cm.get(i, i)).sum();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let predicted: u64 = (0..c).map(|t| cm.get(t, k)).sum();
            let actual: u64 = (0..c).map(|p| cm.get(k, p)).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: actual,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    Ok(Metrics {
        accuracy: ratio(trace, total),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        per_class,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Eval-mode class predictions for a batch of preprocessed inputs.
pub fn predict_classes(model: &ModelGraph, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = model.forward_eval(inputs)?;
    Ok(logits.data().chunks(model.num_classes()).map(argmax).collect())
}

/// Eval-mode softmax probabilities, one row per input.
pub fn predict_probabilities(model: &ModelGraph, inputs: &Tensor) -> Result<Vec<Vec<f32>>> {
    let logits = model.forward_eval(inputs)?;
    let c = model.num_classes();
    Ok(softmax(logits.data(), c).chunks(c).map(<[f32]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub final_train_loss: f32,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    /// Not serialized; varies between runs.
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub class_names: Vec<String>,
    pub pretrained: Option<String>,
    pub config: TrainConfig,
    pub fold_seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

impl MetricsReport {
    fn from_folds(
        dataset: &LabeledDataset,
        pretrained: Option<String>,
        config: TrainConfig,
        fold_seed: u64,
        folds: Vec<FoldResult>,
    ) -> Self {
        let n = folds.len() as f64;
        let mean_of = |f: fn(&Metrics) -> f64| folds.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let mean = MeanMetrics {
            accuracy: mean_of(|m| m.accuracy),
            precision: mean_of(|m| m.precision),
            recall: mean_of(|m| m.recall),
            f1: mean_of(|m| m.f1),
        };
        Self {
            dataset: dataset.source.clone(),
            class_names: dataset.class_names.clone(),
            pretrained,
            config,
            fold_seed,
            folds,
            mean,
        }
    }

    /// Sum of every fold's confusion matrix.
    pub fn pooled_confusion(&self) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(self.class_names.len());
        for f in &self.folds {
            cm.merge(&f.confusion).expect("folds share the class count");
        }
        cm
    }

    pub fn total_wall_time_secs(&self) -> f64 {
        self.folds.iter().map(|f| f.wall_time_secs).sum()
    }

    /// Deterministic text rendering: config block, one block per fold, mean
    /// block. Metrics are percentages with two decimals.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::from("# voltavision cross-validation report\n\n[config]\n");
        let _ = writeln!(out, "dataset = {}", quoted(&self.dataset));
        let _ = writeln!(
            out,
            "classes = [{}]",
            self.class_names.iter().map(|n| quoted(n)).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(
            out,
            "pretrained = {}",
            quoted(self.pretrained.as_deref().unwrap_or("none"))
        );
        let _ = writeln!(out, "folds = {}", self.folds.len());
        let _ = writeln!(out, "fold_seed = {}", self.fold_seed);
        let _ = writeln!(out, "train_seed = {}", c.seed);
        let _ = writeln!(out, "trainable_policy = {}", quoted(c.trainable_policy.name()));
        let _ = writeln!(out, "epochs = {}", c.epochs);
        let _ = writeln!(out, "base_lr = {:e}", c.base_lr);
        let _ = writeln!(out, "momentum = {}", c.momentum);
        let _ = writeln!(out, "lr_step = {}", c.lr_step);
        let _ = writeln!(out, "lr_gamma = {}", c.lr_gamma);
        let _ = writeln!(out, "batch_size = {}", c.batch_size);
        out.push_str("loss_reduction = \"mean\"\n");
        out.push_str("averaging = \"macro\"\n");

        for f in &self.folds {
            let _ = writeln!(out, "\n[fold.{}]", f.fold);
            let _ = writeln!(out, "seed = {}", f.seed);
            let _ = writeln!(out, "train_samples = {}", f.train_samples);
            let _ = writeln!(out, "validation_samples = {}", f.validation_samples);
            let _ = writeln!(out, "final_train_loss = {:.6}", f.final_train_loss);
            let _ = writeln!(out, "accuracy = {}", pct(f.metrics.accuracy));
            let _ = writeln!(out, "precision = {}", pct(f.metrics.precision));
            let _ = writeln!(out, "recall = {}", pct(f.metrics.recall));
            let _ = writeln!(out, "f1 = {}", pct(f.metrics.f1));
            let rows: Vec<String> = f
                .confusion
                .rows()
                .iter()
                .map(|r| format!("[{}]", r.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")))
                .collect();
            let _ = writeln!(out, "confusion = [{}]", rows.join(", "));
        }

        out.push_str("\n[mean]\n");
        let _ = writeln!(out, "accuracy = {}", pct(self.mean.accuracy));
        let _ = writeln!(out, "precision = {}", pct(self.mean.precision));
        let _ = writeln!(out, "recall = {}", pct(self.mean.recall));
        let _ = writeln!(out, "f1 = {}", pct(self.mean.f1));
        out
    }

    pub fn table_row(&self, pretrain_label: &str) -> TableRow {
        TableRow {
            pretrain: pretrain_label.to_owned(),
            model: "VoltaVision".to_owned(),
            accuracy: self.mean.accuracy,
            precision: self.mean.precision,
            recall: self.mean.recall,
            f1: self.mean.f1,
            time_secs: Some(self.total_wall_time_secs() / self.folds.len().max(1) as f64),
            model_size_bytes: None,
        }
    }
}

/// One line of a results table; rows from other tools can be built directly.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub pretrain: String,
    pub model: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub time_secs: Option<f64>,
    pub model_size_bytes: Option<usize>,
}

pub fn format_size(bytes: usize) -> String {
    if bytes >= 1_000_000 {
        format!("{:.2}MB", bytes as f64 / 1e6)
    } else {
        format!("{:.0}kB", bytes as f64 / 1e3)
    }
}

/// Renders rows with columns Pre-Train Dataset, Model, Accuracy, Precision,
/// Recall, F1-Score, Fine-tuning Time, Model Size.
pub fn format_table(rows: &[TableRow]) -> String {
    let header = [
        "Pre-Train Dataset",
        "Model",
        "Accuracy",
        "Precision",
        "Recall",
        "F1-Score",
        "Fine-tuning Time",
        "Model Size",
    ];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.pretrain.clone(),
                r.model.clone(),
                pct(r.accuracy),
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
                r.time_secs.map_or("-".into(), |t| format!("{t:.1}s")),
                r.model_size_bytes.map_or("-".into(), format_size),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(&header.map(String::from));
    out.push_str(&line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>()));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

/// Runs k-fold cross-validation.
///
/// For each fold the model is either a copy of `pretrained` with its head
/// replaced to the dataset's class count, or a freshly built network when no
/// checkpoint is given. Fold `i` trains with seed `cfg.seed ^ i` on the other
/// folds and is scored on fold `i` after the final epoch. Folds run in
/// parallel; results are assembled in fold order.
pub fn cross_validate(
    pretrained: Option<&ModelGraph>,
    dataset: &LabeledDataset,
    folds: &FoldPlan,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if folds.total() != dataset.len() {
        return Err(Error::Data(format!(
            "fold plan covers {} samples but dataset has {}",
            folds.total(),
            dataset.len()
        )));
    }
    let classes = dataset.num_classes();
    let expected = ArchitectureConfig::voltavision(classes);
    if let Some(m) = pretrained {
        if !m.config().same_backbone(&expected) {
            return Err(Error::Checkpoint(format!(
                "pretrained architecture {:?} differs from the expected backbone beyond the head",
                m.config()
            )));
        }
    }
    let input = expected.input_shape(1);
    if let Some(s) = dataset.samples.iter().find(|s| s.image.shape() != input) {
        return Err(Error::shape("cross_validate", input.to_string(), s.image.shape()));
    }

    let results = (0..folds.k)
        .into_par_iter()
        .map(|i| -> Result<FoldResult> {
            let started = Instant::now();
            let seed = cfg.seed ^ i as u64;
            let mut model = match pretrained {
                Some(m) => {
                    let mut m = m.clone();
                    m.replace_head(classes, seed)?;
                    m
                }
                None => ModelGraph::build(expected.clone(), seed)?,
            };
            let train_idx = folds.train_indices(i);
            let val_idx = &folds.folds[i];
            let fold_cfg = TrainConfig { seed, ..cfg.clone() };
            let history = fit(&mut model, DatasetSplit::new(dataset, &train_idx), &fold_cfg)?;

            let mut preds = Vec::with_capacity(val_idx.len());
            for chunk in val_idx.chunks(cfg.batch_size) {
                let (x, _) = dataset.batch(chunk)?;
                preds.extend(predict_classes(&model, &x)?);
            }
            let truth: Vec<usize> = val_idx.iter().map(|&j| dataset.samples[j].label).collect();
            let confusion = ConfusionMatrix::from_predictions(&truth, &preds, classes)?;
            let metrics = compute_metrics(&confusion)?;
            Ok(FoldResult {
                fold: i,
                seed,
                train_samples: train_idx.len(),
                validation_samples: val_idx.len(),
                final_train_loss: history.last().map_or(f32::NAN, |h| h.train.mean_loss),
                metrics,
                confusion,
                wall_time_secs: started.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MetricsReport::from_folds(
        dataset,
        pretrained.map(|m| {
            if m.provenance().is_empty() {
                "unnamed checkpoint".to_owned()
            } else {
                m.provenance().to_owned()
            }
        }),
        cfg.clone(),
        folds.seed,
        results,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2, 0], vec![1, 9, 0], vec![0, 0, 10]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.9).abs() < 1e-12);
        let f1: Vec<f64> = m.per_class.iter().map(|c| c.f1).collect();
        for (got, want) in f1.iter().zip([0.8421, 0.8571, 1.0]) {
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        assert!((m.f1 - 0.8997).abs() < 5e-5);
    }

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 0], vec![0, 7]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 6, 0], vec![0, 0, 0]]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(matches!(compute_metrics(&ConfusionMatrix::new(3)), Err(Error::Data(_))));
    }

    #[test]
    fn single_class_prediction_accuracy_is_prevalence() {
        let truth = [0, 0, 1, 2, 2, 2, 1, 0, 2, 2];
        let cm = ConfusionMatrix::from_predictions(&truth, &[2; 10], 3).unwrap();
        assert!((compute_metrics(&cm).unwrap().accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_and_shift() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        let row = [0.2f32, -1.0, 0.7, 0.7];
        let shifted: Vec<f32> = row.iter().map(|v| v + 3.0).collect();
        assert_eq!(argmax(&row), argmax(&shifted));
    }

    #[test]
    fn table_layout() {
        let row = TableRow {
            pretrain: "src3".into(),
            model: "VoltaVision".into(),
            accuracy: 0.952,
            precision: 0.9521,
            recall: 0.9525,
            f1: 0.952,
            time_secs: Some(46.7),
            model_size_bytes: Some(127_000),
        };
        let t = format_table(&[row]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("| Pre-Train Dataset | Model"));
        assert!(lines[2].contains("95.20") && lines[2].contains("127kB"));
    }
}

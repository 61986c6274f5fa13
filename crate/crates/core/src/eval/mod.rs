//! Confusion matrices, per-class metrics and training-curve export.

mod curves;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use curves::{export_curves, read_curves_csv, CurveFiles};

use crate::class::RoastClass;
use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::imaging::PreprocessConfig;
use crate::model::{predict, ModelArtifact, Prediction};

const N: usize = RoastClass::COUNT;

/// Rows are actual classes, columns predicted, both in
/// [`RoastClass::TABLE_ORDER`] (green, light, medium, dark).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn from_table(counts: [[u64; N]; N]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn get(&self, actual: RoastClass, predicted: RoastClass) -> u64 {
        self.counts[actual.table_position()][predicted.table_position()]
    }

    pub fn record(&mut self, actual: RoastClass, predicted: RoastClass) {
        self.counts[actual.table_position()][predicted.table_position()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose actual class is `class`.
    pub fn row_sum(&self, class: RoastClass) -> u64 {
        self.counts[class.table_position()].iter().sum()
    }

    /// Number of samples predicted as `class`.
    pub fn col_sum(&self, class: RoastClass) -> u64 {
        let c = class.table_position();
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..N {
            for j in 0..N {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion_matrix(actuals: &[RoastClass], predictions: &[RoastClass]) -> Result<ConfusionMatrix> {
    if actuals.len() != predictions.len() {
        return Err(Error::Shape(format!("{} actual labels but {} predictions", actuals.len(), predictions.len())));
    }
    if actuals.is_empty() {
        return Err(Error::Data("no samples to tabulate".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (a, p) in actuals.iter().zip(predictions) {
        m.record(*a, *p);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: RoastClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_tag: String,
    pub confusion: ConfusionMatrix,
    /// In table order.
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    /// Classes never predicted; their precision is reported as 0.
    pub zero_division: Vec<RoastClass>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metrics_from_confusion(m: &ConfusionMatrix, dataset_tag: impl Into<String>) -> Result<EvaluationReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let mut per_class = Vec::with_capacity(N);
    let mut zero_division = Vec::new();
    for class in RoastClass::TABLE_ORDER {
        let tp = m.get(class, class);
        let predicted = m.col_sum(class);
        if predicted == 0 {
            zero_division.push(class);
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, m.row_sum(class));
        per_class.push(ClassMetrics {
            class,
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: m.row_sum(class),
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / N as f64;
    let weighted =
        |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64;
    let macro_avg = AverageMetrics { precision: mean(|c| c.precision), recall: mean(|c| c.recall), f1: mean(|c| c.f1) };
    let weighted_avg =
        AverageMetrics { precision: weighted(|c| c.precision), recall: weighted(|c| c.recall), f1: weighted(|c| c.f1) };
    Ok(EvaluationReport {
        dataset_tag: dataset_tag.into(),
        confusion: *m,
        per_class,
        accuracy: ratio(m.trace(), total),
        macro_avg,
        weighted_avg,
        zero_division,
    })
}

impl EvaluationReport {
    pub fn metrics(&self, class: RoastClass) -> &ClassMetrics {
        &self.per_class[class.table_position()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Classification-report table followed by the confusion matrix.
    pub fn to_text(&self) -> String {
        let total = self.confusion.total();
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.dataset_tag);
        let _ = writeln!(s, "{:>14} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1-score", "support");
        let _ = writeln!(s);
        for c in &self.per_class {
            let mark = if self.zero_division.contains(&c.class) { "*" } else { "" };
            let _ = writeln!(
                s,
                "{:>14} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                format!("{}{mark}", c.class),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>14} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", self.accuracy, total);
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(s, "{:>14} {:>9.2} {:>9.2} {:>9.2} {:>9}", name, a.precision, a.recall, a.f1, total);
        }
        if !self.zero_division.is_empty() {
            let _ = writeln!(s, "\n* never predicted; precision set to 0");
        }
        let _ = writeln!(s, "\nconfusion (rows actual, columns predicted)");
        let _ = write!(s, "{:>8}", "");
        for c in RoastClass::TABLE_ORDER {
            let _ = write!(s, " {:>7}", c.label());
        }
        let _ = writeln!(s);
        for (i, c) in RoastClass::TABLE_ORDER.iter().enumerate() {
            let _ = write!(s, "{:>8}", c.label());
            for v in self.confusion.counts[i] {
                let _ = write!(s, " {v:>7}");
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Predicts every sample and tabulates the results.
pub fn evaluate(
    artifact: &ModelArtifact,
    samples: &[LabeledSample],
    preprocess_config: &PreprocessConfig,
    dataset_tag: &str,
) -> Result<EvaluationReport> {
    evaluate_with(artifact, samples, preprocess_config, dataset_tag, false)
}

/// [`evaluate`], optionally tolerating a preprocessing fingerprint mismatch.
pub fn evaluate_with(
    artifact: &ModelArtifact,
    samples: &[LabeledSample],
    preprocess_config: &PreprocessConfig,
    dataset_tag: &str,
    allow_mismatch: bool,
) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let predictions: Vec<Prediction> = samples
        .par_iter()
        .map(|s| {
            s.load()
                .and_then(|img| predict(artifact, &img, preprocess_config, allow_mismatch))
                .map_err(|e| Error::Sample { sample: s.id(), source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let actual: Vec<RoastClass> = samples.iter().map(|s| s.class).collect();
    let predicted: Vec<RoastClass> = predictions.iter().map(|p| p.predicted_class).collect();
    metrics_from_confusion(&confusion_matrix(&actual, &predicted)?, dataset_tag)
}

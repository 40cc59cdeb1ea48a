//! Multiclass evaluation: confusion counts, per-class precision/recall/F1,
//! and the unweighted (macro) F1 mean.

use crate::error::{Error, Result};
use crate::text::LabelVocab;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Mean of per-class F1 over every class in the label vocabulary;
    /// classes with zero precision+recall contribute 0.
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Computes the report from parallel true/predicted class-id lists.
#[allow(clippy::needless_range_loop)]
pub fn compute_metrics(
    truth: &[usize],
    predicted: &[usize],
    labels: &LabelVocab,
) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty data set".into()));
    }
    if truth.len() != predicted.len() {
        return Err(Error::Usage(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k {
            return Err(Error::Data(format!("true label id {t} out of range for {k} classes")));
        }
        if p >= k {
            return Err(Error::Data(format!("predicted id {p} out of range for {k} classes")));
        }
        confusion[t][p] += 1;
    }

    let mut per_class = Vec::with_capacity(k);
    let mut f1_sum = 0.0;
    let mut correct = 0usize;
    for c in 0..k {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..k).map(|t| confusion[t][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let precision = if predicted_c > 0 { tp as f64 / predicted_c as f64 } else { 0.0 };
        let recall = if actual_c > 0 { tp as f64 / actual_c as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        correct += tp;
        per_class.push(ClassMetrics {
            label: labels.label(c).unwrap_or("?").to_string(),
            precision,
            recall,
            f1,
            support: actual_c,
        });
    }

    Ok(MetricsReport {
        per_class,
        macro_f1: f1_sum / k as f64,
        accuracy: correct as f64 / truth.len() as f64,
        confusion,
    })
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.chars().count())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f, "{:width$}  precision  recall  f1      support", "label")?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:width$}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(f, "macro_f1={:.6}", self.macro_f1)?;
        write!(f, "accuracy={:.6}", self.accuracy)
    }
}

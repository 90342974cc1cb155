//! Segmentation metrics: confusion matrix, per-class IoU/accuracy, means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K counts, rows indexed by ground truth, columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::validation("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: i32, prediction: i32) -> Result<()> {
        let k = self.classes as i32;
        if truth < 0 || truth >= k || prediction < 0 || prediction >= k {
            return Err(Error::validation(format!(
                "class out of range: truth {truth}, prediction {prediction}, K {k}"
            )));
        }
        self.counts[truth as usize * self.classes + prediction as usize] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn tp(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    fn fp(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&t| t != c)
            .map(|t| self.count(t, c))
            .sum()
    }

    fn fn_(&self, c: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != c)
            .map(|p| self.count(c, p))
            .sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class is absent from both
    /// prediction and ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let denom = self.tp(c) + self.fp(c) + self.fn_(c);
        if denom == 0 {
            None
        } else {
            Some(self.tp(c) as f64 / denom as f64)
        }
    }

    /// Recall of class `c`; `None` when absent from the ground truth.
    pub fn class_accuracy(&self, c: usize) -> Option<f64> {
        let denom = self.tp(c) + self.fn_(c);
        if denom == 0 {
            None
        } else {
            Some(self.tp(c) as f64 / denom as f64)
        }
    }

    /// Mean IoU over classes present in prediction or truth.
    pub fn miou(&self) -> f64 {
        mean_of(
            (0..self.classes)
                .filter_map(|c| self.iou(c))
                .collect::<Vec<_>>(),
        )
    }

    /// Mean class accuracy over classes present in the ground truth.
    pub fn mean_class_accuracy(&self) -> f64 {
        mean_of(
            (0..self.classes)
                .filter_map(|c| self.class_accuracy(c))
                .collect::<Vec<_>>(),
        )
    }

    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.classes).map(|c| self.tp(c)).sum();
        correct as f64 / total as f64
    }
}

fn mean_of(values: Vec<f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// The metrics report serialized by evaluation commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub per_class_acc: Vec<Option<f64>>,
    pub macc: f64,
    pub overall_accuracy: f64,
    pub evaluated_vertices: u64,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        MetricsReport {
            per_class_iou: (0..m.classes()).map(|c| m.iou(c)).collect(),
            miou: m.miou(),
            per_class_acc: (0..m.classes()).map(|c| m.class_accuracy(c)).collect(),
            macc: m.mean_class_accuracy(),
            overall_accuracy: m.overall_accuracy(),
            evaluated_vertices: m.total(),
        }
    }
}

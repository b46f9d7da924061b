//! Accuracy reporting for the calibrated and the conventional (argmax) rule.

use serde::{Deserialize, Serialize};

use crate::calibrator::{predict_conventional, CalibratedClassifier};
use crate::error::{Error, Result};
use crate::representation::LogitVector;

/// Accuracy summary of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMetrics {
    pub accuracy: f64,
    /// `None` for labels absent from the gold set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl RuleMetrics {
    pub fn from_predictions(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::InvalidShape(format!(
                "{} predictions for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty set".into()));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&p, &g) in pred.iter().zip(gold) {
            for label in [p, g] {
                if label >= n_classes {
                    return Err(Error::InvalidLabel { label, n_classes });
                }
            }
            confusion[g][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        Ok(RuleMetrics {
            accuracy: correct as f64 / gold.len() as f64,
            per_class_accuracy,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_examples: usize,
    pub n_classes: usize,
    pub calibrated: RuleMetrics,
    pub conventional: RuleMetrics,
}

impl Metrics {
    pub fn calibrated_accuracy(&self) -> f64 {
        self.calibrated.accuracy
    }

    pub fn conventional_accuracy(&self) -> f64 {
        self.conventional.accuracy
    }
}

/// Scores both rules against zero-based gold labels.
pub fn evaluate(classifier: &CalibratedClassifier, logits: &[LogitVector], gold: &[usize]) -> Result<Metrics> {
    let n = classifier.n_classes();
    if let Some(&label) = gold.iter().find(|&&g| g >= n) {
        return Err(Error::InvalidLabel { label, n_classes: n });
    }
    let calibrated = classifier.predict_batch(logits)?;
    let conventional: Vec<usize> = logits.iter().map(predict_conventional).collect();
    Ok(Metrics {
        n_examples: gold.len(),
        n_classes: n,
        calibrated: RuleMetrics::from_predictions(&calibrated, gold, n)?,
        conventional: RuleMetrics::from_predictions(&conventional, gold, n)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Mean and spread of accuracies over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub calibrated_accuracy: MeanStd,
    pub conventional_accuracy: MeanStd,
}

pub fn aggregate(runs: &[Metrics]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("nothing to aggregate".into()));
    }
    let cal: Vec<f64> = runs.iter().map(Metrics::calibrated_accuracy).collect();
    let conv: Vec<f64> = runs.iter().map(Metrics::conventional_accuracy).collect();
    Ok(Aggregate {
        runs: runs.len(),
        calibrated_accuracy: MeanStd::of(&cal),
        conventional_accuracy: MeanStd::of(&conv),
    })
}

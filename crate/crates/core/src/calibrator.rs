//! End-to-end calibration: representation, restarts, selection, and the
//! resulting decision rule.
//!
//! At inference a vector goes to the component with the highest Gaussian
//! log-density, ignoring the mixing weights, and the component's assigned
//! label is returned. Weights only describe the class balance of the
//! estimate set, which need not match the data being classified.

use serde::{Deserialize, Serialize};

use crate::assignment::{optimal_assignment, ClusterLabelAssignment};
use crate::error::{Error, Result};
use crate::gmm::{ComponentFactor, EmConfig, GaussianComponent, MixtureEstimate};
use crate::representation::{to_representation, LogitVector, PredictionVector, Representation};
use crate::selection::{run_restarts, select_estimate, RestartBatch, SelectionStrategy};

/// Identifier written into every classifier document.
pub const CLASSIFIER_FORMAT: &str = "protocal-classifier";
pub const CLASSIFIER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mode: Representation,
    pub restarts: usize,
    #[serde(flatten)]
    pub em: EmConfig,
    pub selection: SelectionStrategy,
    /// Restart `r` uses seed `seed + r`.
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: Representation::LogProb,
            restarts: 100,
            em: EmConfig::default(),
            selection: SelectionStrategy::AssignmentScore,
            seed: 0,
        }
    }
}

/// Per-restart summary kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub failed: bool,
    pub error: Option<String>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: Option<f64>,
    pub assignment_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub estimate_size: usize,
    pub restarts: usize,
    pub converged: usize,
    pub failed: usize,
    pub selected_seed: u64,
    pub selected_index: usize,
    pub assignment_score: f64,
    pub log_likelihood: f64,
    pub degenerate: bool,
    pub per_restart: Vec<RestartSummary>,
}

impl CalibrationReport {
    fn from_batch(batch: &RestartBatch, selected: usize, classifier: &CalibratedClassifier, size: usize) -> Self {
        let per_restart = batch
            .fits
            .iter()
            .map(|f| match &f.outcome {
                Ok(e) => RestartSummary {
                    seed: f.seed,
                    failed: false,
                    error: None,
                    converged: e.converged,
                    iterations: e.iterations,
                    log_likelihood: Some(e.log_likelihood),
                    assignment_score: optimal_assignment(e).ok().map(|a| a.score),
                },
                Err(err) => RestartSummary {
                    seed: f.seed,
                    failed: true,
                    error: Some(err.to_string()),
                    converged: false,
                    iterations: 0,
                    log_likelihood: None,
                    assignment_score: None,
                },
            })
            .collect();
        CalibrationReport {
            estimate_size: size,
            restarts: batch.restarts(),
            converged: batch.converged(),
            failed: batch.failed(),
            selected_seed: classifier.estimate.seed,
            selected_index: selected,
            assignment_score: classifier.assignment.score,
            log_likelihood: classifier.estimate.log_likelihood,
            degenerate: classifier.estimate.degenerate,
            per_restart,
        }
    }
}

/// Selected mixture plus its cluster-to-label assignment. Immutable.
#[derive(Debug, Clone)]
pub struct CalibratedClassifier {
    estimate: MixtureEstimate,
    assignment: ClusterLabelAssignment,
    mode: Representation,
    config: CalibrationConfig,
    factors: Vec<ComponentFactor>,
}

impl PartialEq for CalibratedClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.estimate == other.estimate
            && self.assignment == other.assignment
            && self.mode == other.mode
            && self.config == other.config
    }
}

impl CalibratedClassifier {
    /// Builds a classifier from an estimate, computing its optimal assignment.
    pub fn from_estimate(estimate: MixtureEstimate, mode: Representation, config: CalibrationConfig) -> Result<Self> {
        let assignment = optimal_assignment(&estimate)?;
        Self::with_assignment(estimate, assignment, mode, config)
    }

    /// Builds a classifier with an explicit assignment. The assignment must be
    /// a permutation over the components; it is not re-optimized.
    pub fn with_assignment(
        estimate: MixtureEstimate,
        assignment: ClusterLabelAssignment,
        mode: Representation,
        config: CalibrationConfig,
    ) -> Result<Self> {
        let n = estimate.n_components();
        if n < 2 || estimate.dim() != n {
            return Err(Error::InvalidEstimate(format!(
                "need N >= 2 components of dimension N, got {n} of dimension {}",
                estimate.dim()
            )));
        }
        crate::assignment::cla_score_of(&estimate.mean_matrix(), &assignment.mapping)?;
        let factors = ComponentFactor::all(&estimate)?;
        Ok(CalibratedClassifier {
            estimate,
            assignment,
            mode,
            config,
            factors,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.estimate.n_components()
    }

    pub fn estimate(&self) -> &MixtureEstimate {
        &self.estimate
    }

    pub fn assignment(&self) -> &ClusterLabelAssignment {
        &self.assignment
    }

    pub fn mode(&self) -> Representation {
        self.mode
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.config
    }

    pub fn degenerate(&self) -> bool {
        self.estimate.degenerate
    }

    /// Copy with replaced mixing weights. Weights do not affect predictions.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.n_classes() || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidInput("weights must be N positive numbers".into()));
        }
        let total: f64 = weights.iter().sum();
        let mut estimate = self.estimate.clone();
        for (c, w) in estimate.components.iter_mut().zip(weights) {
            c.weight = w / total;
        }
        Self::with_assignment(estimate, self.assignment.clone(), self.mode, self.config)
    }

    fn check_len(&self, logits: &LogitVector) -> Result<()> {
        if logits.n_classes() != self.n_classes() {
            return Err(Error::InvalidShape(format!(
                "expected {} logits, got {}",
                self.n_classes(),
                logits.n_classes()
            )));
        }
        Ok(())
    }

    /// Component log-densities of an already transformed vector.
    pub fn component_log_densities(&self, x: &PredictionVector) -> Vec<f64> {
        let mut scratch = vec![0.0; x.dim()];
        self.factors
            .iter()
            .zip(&self.estimate.components)
            .map(|(f, c)| f.log_density(&c.mean, x.values(), &mut scratch))
            .collect()
    }

    /// Most likely cluster, lowest index on ties.
    pub fn predict_cluster(&self, logits: &LogitVector) -> Result<usize> {
        self.check_len(logits)?;
        let x = to_representation(logits, self.mode);
        let dens = self.component_log_densities(&x);
        let mut best = 0;
        for (n, &d) in dens.iter().enumerate().skip(1) {
            if d > dens[best] {
                best = n;
            }
        }
        Ok(best)
    }

    /// Zero-based predicted label.
    pub fn predict(&self, logits: &LogitVector) -> Result<usize> {
        Ok(self.assignment.label_of(self.predict_cluster(logits)?))
    }

    pub fn predict_batch(&self, logits: &[LogitVector]) -> Result<Vec<usize>> {
        logits.iter().map(|l| self.predict(l)).collect()
    }

    pub fn to_document(&self) -> ClassifierDocument {
        ClassifierDocument {
            format: CLASSIFIER_FORMAT.to_string(),
            version: CLASSIFIER_VERSION,
            n_classes: self.n_classes(),
            mode: self.mode,
            config: self.config,
            seed: self.estimate.seed,
            components: self
                .estimate
                .components
                .iter()
                .map(|c| ComponentDocument {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: c.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
                })
                .collect(),
            assignment: self.assignment.clone(),
            fit: FitDocument {
                log_likelihood: self.estimate.log_likelihood,
                converged: self.estimate.converged,
                iterations: self.estimate.iterations,
                degenerate: self.estimate.degenerate,
                trajectory: self.estimate.trajectory.clone(),
            },
        }
    }

    pub fn from_document(doc: ClassifierDocument) -> Result<Self> {
        if doc.format != CLASSIFIER_FORMAT {
            return Err(Error::InvalidInput(format!(
                "not a classifier document: `{}`",
                doc.format
            )));
        }
        if doc.version != CLASSIFIER_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported classifier version {} (expected {CLASSIFIER_VERSION})",
                doc.version
            )));
        }
        if doc.components.len() != doc.n_classes {
            return Err(Error::InvalidShape(format!(
                "{} components for {} classes",
                doc.components.len(),
                doc.n_classes
            )));
        }
        let components = doc
            .components
            .into_iter()
            .map(|c| GaussianComponent::new(c.mean, c.covariance, c.weight))
            .collect::<Result<Vec<_>>>()?;
        let estimate = MixtureEstimate {
            components,
            seed: doc.seed,
            log_likelihood: doc.fit.log_likelihood,
            trajectory: doc.fit.trajectory,
            converged: doc.fit.converged,
            iterations: doc.fit.iterations,
            degenerate: doc.fit.degenerate,
        };
        Self::with_assignment(estimate, doc.assignment, doc.mode, doc.config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("classifier document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ClassifierDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("classifier document: {e}")))?;
        Self::from_document(doc)
    }
}

/// Serialized form of a [`CalibratedClassifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDocument {
    pub format: String,
    pub version: u32,
    pub n_classes: usize,
    pub mode: Representation,
    pub config: CalibrationConfig,
    /// Seed of the selected restart.
    pub seed: u64,
    pub components: Vec<ComponentDocument>,
    pub assignment: ClusterLabelAssignment,
    pub fit: FitDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub degenerate: bool,
    pub trajectory: Vec<f64>,
}

/// Calibrates on unlabeled logits and returns the classifier with restart
/// diagnostics.
pub fn calibrate_with_report(
    raw_logits: &[LogitVector],
    n_classes: usize,
    config: &CalibrationConfig,
) -> Result<(CalibratedClassifier, CalibrationReport)> {
    if n_classes < 2 {
        return Err(Error::InvalidShape(format!("need at least 2 classes, got {n_classes}")));
    }
    let needed = n_classes.max(2);
    if raw_logits.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: raw_logits.len(),
        });
    }
    if let Some((i, l)) = raw_logits.iter().enumerate().find(|(_, l)| l.n_classes() != n_classes) {
        return Err(Error::InvalidShape(format!(
            "vector {i} has {} logits, expected {n_classes}",
            l.n_classes()
        )));
    }
    let data: Vec<PredictionVector> = raw_logits.iter().map(|l| to_representation(l, config.mode)).collect();
    let batch = run_restarts(&data, n_classes, config.seed, config.restarts, &config.em)?;
    let selection = select_estimate(&batch, config.selection)?;
    let index = selection.index;
    let classifier =
        CalibratedClassifier::with_assignment(selection.estimate.clone(), selection.assignment, config.mode, *config)?;
    let report = CalibrationReport::from_batch(&batch, index, &classifier, raw_logits.len());
    Ok((classifier, report))
}

pub fn calibrate(
    raw_logits: &[LogitVector],
    n_classes: usize,
    config: &CalibrationConfig,
) -> Result<CalibratedClassifier> {
    calibrate_with_report(raw_logits, n_classes, config).map(|(c, _)| c)
}

/// Zero-based argmax of the logits, lowest index on ties.
pub fn predict_conventional(logits: &LogitVector) -> usize {
    let o = logits.values();
    let mut best = 0;
    for (i, &v) in o.iter().enumerate().skip(1) {
        if v > o[best] {
            best = i;
        }
    }
    best
}

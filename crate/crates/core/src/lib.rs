//! Unsupervised calibration of N-way classifier outputs.
//!
//! Given an unlabeled set of prediction vectors, the engine fits one Gaussian
//! per label with EM, matches clusters to labels by maximum-weight bipartite
//! matching of the component means, and classifies new vectors by the most
//! likely component instead of the raw argmax.
//!
//! ```no_run
//! use protocal_core::{calibrate, CalibrationConfig, LogitVector};
//!
//! let pool: Vec<LogitVector> = Vec::new(); // unlabeled logits
//! let clf = calibrate(&pool, 2, &CalibrationConfig::default()).unwrap();
//! let label = clf.predict(&LogitVector::new(vec![0.1, 1.3]).unwrap()).unwrap();
//! # let _ = label;
//! ```

pub mod assignment;
pub mod calibrator;
pub mod dump;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod representation;
pub mod selection;
pub mod synth;

pub use assignment::{brute_force_assignment, cla_score, optimal_assignment, ClusterLabelAssignment};
pub use calibrator::{
    calibrate, calibrate_with_report, predict_conventional, CalibratedClassifier, CalibrationConfig, CalibrationReport,
};
pub use dump::PredictionRecord;
pub use error::{Error, Result};
pub use gmm::{fit_em, fit_em_from, EmConfig, GaussianComponent, MixtureEstimate};
pub use metrics::{aggregate, evaluate, Aggregate, Metrics};
pub use representation::{to_log_prob, to_representation, LogitVector, PredictionVector, Representation};
pub use selection::{run_restarts, select_estimate, RestartBatch, SelectionStrategy};
pub use synth::{bayes_optimal_accuracy, boundary_sweep, sample_scenario, ScenarioSpec, SweepResult};

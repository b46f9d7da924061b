//! Multi-restart estimation and choice of the final mixture.
//!
//! EM is sensitive to its starting point, so the engine fits the mixture many
//! times with consecutive seeds and keeps one fit. The default criterion is the
//! optimal assignment score of each fit; picking the highest likelihood is
//! available for comparison.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{optimal_assignment, ClusterLabelAssignment};
use crate::error::{Error, Result};
use crate::gmm::{fit_em, EmConfig, MixtureEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SelectionStrategy {
    #[default]
    #[serde(rename = "assignment-score")]
    AssignmentScore,
    #[serde(rename = "max-likelihood")]
    MaxLikelihood,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::AssignmentScore => "assignment-score",
            SelectionStrategy::MaxLikelihood => "max-likelihood",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "assignment-score" | "cla" => Ok(SelectionStrategy::AssignmentScore),
            "max-likelihood" | "likelihood" => Ok(SelectionStrategy::MaxLikelihood),
            other => Err(Error::InvalidConfig(format!(
                "unknown selection strategy `{other}` (expected assignment-score or max-likelihood)"
            ))),
        }
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartFit {
    pub seed: u64,
    pub outcome: std::result::Result<MixtureEstimate, Error>,
}

/// All restarts of one estimation, ordered by seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartBatch {
    pub fits: Vec<RestartFit>,
}

impl RestartBatch {
    /// Wraps already-fitted estimates, using each estimate's own seed.
    pub fn from_estimates(estimates: Vec<MixtureEstimate>) -> Self {
        RestartBatch {
            fits: estimates
                .into_iter()
                .map(|e| RestartFit {
                    seed: e.seed,
                    outcome: Ok(e),
                })
                .collect(),
        }
    }

    pub fn restarts(&self) -> usize {
        self.fits.len()
    }

    pub fn successful(&self) -> impl Iterator<Item = (usize, &MixtureEstimate)> {
        self.fits
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.outcome.as_ref().ok().map(|e| (i, e)))
    }

    pub fn failed(&self) -> usize {
        self.fits.iter().filter(|f| f.outcome.is_err()).count()
    }

    pub fn converged(&self) -> usize {
        self.successful().filter(|(_, e)| e.converged).count()
    }
}

/// Runs `restarts` fits with seeds `base_seed, base_seed + 1, ...` in
/// parallel. The batch is identical to a sequential run.
///
/// Input errors (too little data, bad shapes, bad config) abort the whole
/// run; numerical failures of a single restart are recorded in the batch.
pub fn run_restarts<V: AsRef<[f64]> + Sync>(
    data: &[V],
    n_components: usize,
    base_seed: u64,
    restarts: usize,
    config: &EmConfig,
) -> Result<RestartBatch> {
    if restarts < 1 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    config.validate()?;
    let fits: Vec<RestartFit> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r);
            RestartFit {
                seed,
                outcome: fit_em(data, n_components, seed, config),
            }
        })
        .collect();

    for fit in &fits {
        if let Err(e) = &fit.outcome {
            if !matches!(e, Error::SingularCovariance { .. }) {
                return Err(e.clone());
            }
        }
    }
    if fits.iter().all(|f| f.outcome.is_err()) {
        return Err(Error::EstimationFailed(format!(
            "all {restarts} restarts hit a singular covariance"
        )));
    }
    Ok(RestartBatch { fits })
}

/// The chosen fit, borrowed from its batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub index: usize,
    pub estimate: &'a MixtureEstimate,
    pub assignment: ClusterLabelAssignment,
}

/// Picks one fit from the batch. Ties go to the earliest (lowest-seed) fit.
pub fn select_estimate(batch: &RestartBatch, strategy: SelectionStrategy) -> Result<Selection<'_>> {
    let mut best: Option<(f64, Selection<'_>)> = None;
    for (index, estimate) in batch.successful() {
        let (key, assignment) = match strategy {
            SelectionStrategy::AssignmentScore => {
                let a = optimal_assignment(estimate)?;
                (a.score, Some(a))
            }
            SelectionStrategy::MaxLikelihood => (estimate.log_likelihood, None),
        };
        if best.as_ref().is_none_or(|(k, _)| key > *k) {
            let assignment = match assignment {
                Some(a) => a,
                None => ClusterLabelAssignment {
                    mapping: Vec::new(),
                    score: f64::NAN,
                },
            };
            best = Some((
                key,
                Selection {
                    index,
                    estimate,
                    assignment,
                },
            ));
        }
    }
    let (_, mut selection) = best.ok_or_else(|| Error::EstimationFailed("no successful fit to select from".into()))?;
    if strategy == SelectionStrategy::MaxLikelihood {
        selection.assignment = optimal_assignment(selection.estimate)?;
    }
    Ok(selection)
}

//! Synthetic prediction dumps and independent oracles.
//!
//! A scenario places one Gaussian per class in logit space. Samples are drawn
//! class-by-prior, then projected through log-softmax (by default) so they lie
//! on the same surface real classifier outputs do. The generator's true
//! parameters give a Monte-Carlo Bayes-optimal accuracy to compare against,
//! and [`boundary_sweep`] scores every binary threshold on the positive-class
//! probability.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibrator::predict_conventional;
use crate::dump::PredictionRecord;
use crate::error::{Error, Result};
use crate::representation::{to_log_prob, LogitVector, Representation};

const ESTIMATE_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const BAYES_STREAM: u64 = 2;

/// Default Monte-Carlo draws for [`bayes_optimal_accuracy`].
pub const BAYES_DRAWS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_classes: usize,
    /// One logit-space center per class.
    pub cluster_means: Vec<Vec<f64>>,
    pub cluster_covs: Vec<Vec<Vec<f64>>>,
    /// Class priors of the test split (and of the estimate split unless
    /// `estimate_priors` is given).
    pub class_priors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_priors: Option<Vec<f64>>,
    pub n_estimate: usize,
    pub n_test: usize,
    pub seed: u64,
    /// `log-prob` projects samples through log-softmax; `logits` keeps them raw.
    #[serde(default)]
    pub emit: Representation,
}

/// Logit-space std of the positive-vs-negative log-odds in the preset binary scenarios.
const PRESET_LOG_ODDS_STD: f64 = 0.4;

fn iso_cov(n: usize, var: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { var } else { 0.0 }).collect())
        .collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl ScenarioSpec {
    /// Both class clusters sit on the positive side of the conventional
    /// boundary: negatives centered at P(positive) = 0.70, positives at 0.90.
    pub fn biased_binary(seed: u64) -> Self {
        let var = PRESET_LOG_ODDS_STD * PRESET_LOG_ODDS_STD / 2.0;
        ScenarioSpec {
            n_classes: 2,
            cluster_means: vec![vec![0.0, logit(0.70)], vec![0.0, logit(0.90)]],
            cluster_covs: vec![iso_cov(2, var), iso_cov(2, var)],
            class_priors: vec![0.5, 0.5],
            estimate_priors: None,
            n_estimate: 500,
            n_test: 2000,
            seed,
            emit: Representation::LogProb,
        }
    }

    /// Mirror-image classes centered at P(positive) = 0.25 and 0.75.
    pub fn symmetric_binary(seed: u64) -> Self {
        let var = PRESET_LOG_ODDS_STD * PRESET_LOG_ODDS_STD / 2.0;
        ScenarioSpec {
            cluster_means: vec![vec![0.0, logit(0.25)], vec![0.0, logit(0.75)]],
            cluster_covs: vec![iso_cov(2, var), iso_cov(2, var)],
            ..Self::biased_binary(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "biased-binary" => Ok(Self::biased_binary(seed)),
            "symmetric-binary" => Ok(Self::symmetric_binary(seed)),
            other => Err(Error::InvalidScenario(format!(
                "unknown preset `{other}` (expected biased-binary or symmetric-binary)"
            ))),
        }
    }

    fn check_priors(priors: &[f64], n: usize, what: &str) -> Result<()> {
        if priors.len() != n {
            return Err(Error::InvalidScenario(format!("{what} needs {n} entries")));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidScenario(format!("{what} must be non-negative")));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidScenario(format!("{what} sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes;
        if n < 2 {
            return Err(Error::InvalidScenario("need at least 2 classes".into()));
        }
        if self.cluster_means.len() != n || self.cluster_means.iter().any(|m| m.len() != n) {
            return Err(Error::InvalidScenario(format!(
                "cluster_means must be {n} vectors of length {n}"
            )));
        }
        if self.cluster_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("cluster_means must be finite".into()));
        }
        if self.cluster_covs.len() != n {
            return Err(Error::InvalidScenario(format!("cluster_covs needs {n} matrices")));
        }
        Self::check_priors(&self.class_priors, n, "class_priors")?;
        if let Some(p) = &self.estimate_priors {
            Self::check_priors(p, n, "estimate_priors")?;
        }
        self.factors().map(|_| ())
    }

    fn factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let n = self.n_classes;
        self.cluster_covs
            .iter()
            .enumerate()
            .map(|(k, cov)| {
                if cov.len() != n || cov.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidScenario(format!("cluster_covs[{k}] must be {n}x{n}")));
                }
                let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
                if (&m - m.transpose()).amax() > 1e-12 {
                    return Err(Error::InvalidScenario(format!("cluster_covs[{k}] is not symmetric")));
                }
                m.cholesky()
                    .map(|c| c.unpack())
                    .ok_or_else(|| Error::InvalidScenario(format!("cluster_covs[{k}] is not positive definite")))
            })
            .collect()
    }
}

/// Generated splits. Gold labels are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub estimate: Vec<LogitVector>,
    /// Kept for auditing only; calibration never reads it.
    pub estimate_gold: Vec<usize>,
    pub test: Vec<LogitVector>,
    pub test_gold: Vec<usize>,
}

impl ScenarioSample {
    pub fn estimate_records(&self) -> Vec<PredictionRecord> {
        records("est", &self.estimate, &self.estimate_gold)
    }

    pub fn test_records(&self) -> Vec<PredictionRecord> {
        records("test", &self.test, &self.test_gold)
    }
}

fn records(prefix: &str, logits: &[LogitVector], gold: &[usize]) -> Vec<PredictionRecord> {
    logits
        .iter()
        .zip(gold)
        .enumerate()
        .map(|(i, (l, &g))| PredictionRecord::new(format!("{prefix}-{i:06}"), l.values().to_vec(), Some(g)))
        .collect()
}

fn draw_label(rng: &mut ChaCha8Rng, priors: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `u` past the last cumulative sum: take the last class with mass.
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(priors.len() - 1)
}

fn draw_point(rng: &mut ChaCha8Rng, mean: &[f64], lower: &DMatrix<f64>) -> Vec<f64> {
    let n = mean.len();
    let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = lower * eps;
    mean.iter().zip(noise.iter()).map(|(m, e)| m + e).collect()
}

fn draw_split(
    spec: &ScenarioSpec,
    lowers: &[DMatrix<f64>],
    priors: &[f64],
    count: usize,
    stream: u64,
) -> (Vec<LogitVector>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut logits = Vec::with_capacity(count);
    let mut gold = Vec::with_capacity(count);
    for _ in 0..count {
        let k = draw_label(&mut rng, priors);
        let raw = LogitVector::new(draw_point(&mut rng, &spec.cluster_means[k], &lowers[k])).expect("finite draws");
        let v = match spec.emit {
            Representation::LogProb => LogitVector::new(to_log_prob(&raw).into_values()).expect("finite log-probs"),
            Representation::Prob | Representation::Logits => raw,
        };
        logits.push(v);
        gold.push(k);
    }
    (logits, gold)
}

/// Draws both splits. The estimate and test splits come from independent
/// streams of the same seed, so resizing one leaves the other unchanged.
pub fn sample_scenario(spec: &ScenarioSpec) -> Result<ScenarioSample> {
    spec.validate()?;
    if spec.emit == Representation::Prob {
        return Err(Error::InvalidScenario("dumps are emitted as logits or log-prob".into()));
    }
    let lowers = spec.factors()?;
    let est_priors = spec.estimate_priors.as_deref().unwrap_or(&spec.class_priors);
    let (estimate, estimate_gold) = draw_split(spec, &lowers, est_priors, spec.n_estimate, ESTIMATE_STREAM);
    let (test, test_gold) = draw_split(spec, &lowers, &spec.class_priors, spec.n_test, TEST_STREAM);
    Ok(ScenarioSample {
        estimate,
        estimate_gold,
        test,
        test_gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    pub accuracy: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Maps logit space onto what a rule reading `emit` vectors can observe.
/// Log-prob vectors determine (and are determined by) the contrasts
/// `o_j - o_0`, so those scenarios are projected onto them.
fn observation_map(n: usize, emit: Representation) -> DMatrix<f64> {
    match emit {
        Representation::Logits => DMatrix::identity(n, n),
        Representation::LogProb | Representation::Prob => DMatrix::from_fn(n - 1, n, |r, c| {
            if c == 0 {
                -1.0
            } else if c == r + 1 {
                1.0
            } else {
                0.0
            }
        }),
    }
}

/// Monte-Carlo accuracy of the likelihood classifier that knows the true
/// class Gaussians and test priors, applied to fresh draws as the emitted
/// representation observes them.
pub fn bayes_optimal_accuracy(spec: &ScenarioSpec, draws: usize) -> Result<BayesEstimate> {
    spec.validate()?;
    if draws == 0 {
        return Err(Error::InvalidScenario("need at least one draw".into()));
    }
    let lowers = spec.factors()?;
    let n = spec.n_classes;
    let map = observation_map(n, spec.emit);
    let obs_means: Vec<DVector<f64>> = spec
        .cluster_means
        .iter()
        .map(|m| &map * DVector::from_column_slice(m))
        .collect();
    let obs_lowers: Vec<DMatrix<f64>> = lowers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let cov = &map * l * l.transpose() * map.transpose();
            cov.cholesky()
                .map(|c| c.unpack())
                .ok_or_else(|| Error::InvalidScenario(format!("cluster_covs[{k}] is degenerate in the observed space")))
        })
        .collect::<Result<_>>()?;
    let log_norms: Vec<f64> = obs_lowers
        .iter()
        .map(|l| -(0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
        .collect();
    let log_priors: Vec<f64> = spec.class_priors.iter().map(|p| p.ln()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(BAYES_STREAM);
    let mut correct = 0usize;
    for _ in 0..draws {
        let k = draw_label(&mut rng, &spec.class_priors);
        let x = &map * DVector::from_vec(draw_point(&mut rng, &spec.cluster_means[k], &lowers[k]));
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..n {
            let z = obs_lowers[c]
                .solve_lower_triangular(&(&x - &obs_means[c]))
                .expect("non-singular factor");
            let score = log_priors[c] + log_norms[c] - 0.5 * z.norm_squared();
            if score > best.1 {
                best = (c, score);
            }
        }
        if best.0 == k {
            correct += 1;
        }
    }
    let p = correct as f64 / draws as f64;
    Ok(BayesEstimate {
        accuracy: p,
        std_error: (p * (1.0 - p) / draws as f64).sqrt(),
        draws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    pub accuracies: Vec<f64>,
}

impl SweepResult {
    /// Threshold/accuracy pair with the highest accuracy (first on ties).
    pub fn best(&self) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (&t, &a) in self.thresholds.iter().zip(&self.accuracies) {
            if best.is_none_or(|(_, ba)| a > ba) {
                best = Some((t, a));
            }
        }
        best
    }
}

/// `count` evenly spaced thresholds from `start` to `stop` inclusive, rounded
/// to 12 decimals so nominal grid points such as 0.5 are hit exactly.
pub fn linear_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    let snap = |t: f64| (t * 1e12).round() / 1e12;
    match count {
        0 => Vec::new(),
        1 => vec![snap(start)],
        _ => (0..count)
            .map(|i| snap(start + (stop - start) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Predicts the positive (second) label iff its softmax probability exceeds
/// `t`, i.e. iff the log-odds exceed `ln(t / (1 - t))`. At `t = 0.5` this is
/// exactly the conventional argmax with its lowest-index tie-break.
pub fn predict_at_threshold(logits: &LogitVector, t: f64) -> usize {
    let o = logits.values();
    usize::from(o[1] - o[0] > logit(t))
}

pub fn boundary_sweep(test_logits: &[LogitVector], test_gold: &[usize], grid: &[f64]) -> Result<SweepResult> {
    if let Some(l) = test_logits.iter().find(|l| l.n_classes() != 2) {
        return Err(Error::BinaryOnly(l.n_classes()));
    }
    if test_logits.len() != test_gold.len() {
        return Err(Error::InvalidShape(format!(
            "{} vectors for {} labels",
            test_logits.len(),
            test_gold.len()
        )));
    }
    if test_gold.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one labeled vector".into()));
    }
    if let Some(&label) = test_gold.iter().find(|&&g| g >= 2) {
        return Err(Error::InvalidLabel { label, n_classes: 2 });
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside (0, 1)")));
    }
    let accuracies = grid
        .iter()
        .map(|&t| {
            let correct = test_logits
                .iter()
                .zip(test_gold)
                .filter(|(l, &g)| predict_at_threshold(l, t) == g)
                .count();
            correct as f64 / test_gold.len() as f64
        })
        .collect();
    Ok(SweepResult {
        thresholds: grid.to_vec(),
        accuracies,
    })
}

/// Accuracy of the conventional argmax rule.
pub fn conventional_accuracy(logits: &[LogitVector], gold: &[usize]) -> f64 {
    let correct = logits
        .iter()
        .zip(gold)
        .filter(|(l, &g)| predict_conventional(l) == g)
        .count();
    correct as f64 / gold.len() as f64
}

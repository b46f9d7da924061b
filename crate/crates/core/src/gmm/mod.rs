//! Full-covariance Gaussian mixture fitted by expectation-maximization.
//!
//! The mixture always has one component per label. Every covariance carries
//! a ridge `reg * I`: on log-probability inputs the data lie on the curved
//! surface `Σ exp(x) = 1`, so the raw scatter is close to (and for two
//! classes exactly) rank deficient.
//!
//! Convergence is measured on the mean per-sample log-likelihood, which keeps
//! the tolerance independent of the estimate-set size.

mod kmeans;

pub use kmeans::{kmeans_init, KMEANS_MAX_ITER};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representation::log_sum_exp;

/// One Gaussian cluster of the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub weight: f64,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>, weight: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidShape(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        Ok(GaussianComponent {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::from_fn(d, d, |i, j| covariance[i][j]),
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Result of one EM run (or of the k-means initialization alone).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEstimate {
    pub components: Vec<GaussianComponent>,
    pub seed: u64,
    /// Mean per-sample log-likelihood of the final parameters.
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood of the initial parameters followed by
    /// one entry per EM iteration.
    pub trajectory: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when an underflowing responsibility row, a re-seeded component or
    /// collapsed component means was encountered.
    pub degenerate: bool,
}

impl MixtureEstimate {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.dim())
    }

    /// Row `n` is the mean of component `n`.
    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| c.mean.iter().copied().collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Ridge added to every covariance diagonal.
    pub reg: f64,
    /// Floor applied to responsibilities before they enter the M-step sums.
    pub min_responsibility_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-3,
            reg: 1e-6,
            min_responsibility_floor: 1e-300,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "reg must be non-negative, got {}",
                self.reg
            )));
        }
        if self.min_responsibility_floor.is_nan() || self.min_responsibility_floor < 0.0 {
            return Err(Error::InvalidConfig(
                "min_responsibility_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Cholesky factor of one component's covariance with its normalizing constant.
#[derive(Debug, Clone)]
pub(crate) struct ComponentFactor {
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl ComponentFactor {
    pub(crate) fn new(component: &GaussianComponent, index: usize) -> Result<Self> {
        let d = component.dim();
        let chol = component
            .covariance
            .clone()
            .cholesky()
            .ok_or(Error::SingularCovariance { component: index })?;
        let lower = chol.unpack();
        let log_det: f64 = 2.0 * (0..d).map(|i| lower[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularCovariance { component: index });
        }
        Ok(ComponentFactor {
            lower,
            log_norm: -0.5 * (d as f64) * (2.0 * PI).ln() - 0.5 * log_det,
        })
    }

    pub(crate) fn all(estimate: &MixtureEstimate) -> Result<Vec<Self>> {
        estimate
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| ComponentFactor::new(c, i))
            .collect()
    }

    /// Log-density at `x`; `scratch` must have the data dimension.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn log_density(&self, mean: &DVector<f64>, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = x.len();
        // Forward substitution L z = x - mu; the Mahalanobis term is |z|^2.
        let mut maha = 0.0;
        for i in 0..d {
            let mut acc = x[i] - mean[i];
            for j in 0..i {
                acc -= self.lower[(i, j)] * scratch[j];
            }
            let z = acc / self.lower[(i, i)];
            scratch[i] = z;
            maha += z * z;
        }
        self.log_norm - 0.5 * maha
    }
}

/// `log N(x | mean, covariance)` evaluated through a Cholesky factorization.
pub fn gaussian_log_density(x: &[f64], component: &GaussianComponent) -> Result<f64> {
    if x.len() != component.dim() {
        return Err(Error::InvalidShape(format!(
            "point has dimension {}, component has {}",
            x.len(),
            component.dim()
        )));
    }
    let factor = ComponentFactor::new(component, 0)?;
    let mut scratch = vec![0.0; x.len()];
    Ok(factor.log_density(&component.mean, x, &mut scratch))
}

/// Posterior cluster memberships from an E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// `|data| x N`, each row sums to one.
    pub matrix: DMatrix<f64>,
    pub mean_log_likelihood: f64,
    /// At least one row underflowed for every component and was set uniform.
    pub degenerate: bool,
}

pub(crate) fn check_data<V: AsRef<[f64]>>(data: &[V]) -> Result<usize> {
    let dim = data.first().map_or(0, |v| v.as_ref().len());
    if dim == 0 {
        return Err(Error::InvalidShape("data points must be non-empty".into()));
    }
    for (i, v) in data.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::InvalidShape(format!(
                "point {i} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(dim)
}

pub fn e_step<V: AsRef<[f64]>>(data: &[V], estimate: &MixtureEstimate) -> Result<Responsibilities> {
    let factors = ComponentFactor::all(estimate)?;
    e_step_with(data, estimate, &factors)
}

fn e_step_with<V: AsRef<[f64]>>(
    data: &[V],
    estimate: &MixtureEstimate,
    factors: &[ComponentFactor],
) -> Result<Responsibilities> {
    let k = estimate.n_components();
    let dim = estimate.dim();
    let log_weights: Vec<f64> = estimate.components.iter().map(|c| c.weight.ln()).collect();
    let mut matrix = DMatrix::zeros(data.len(), k);
    let mut scratch = vec![0.0; dim];
    let mut row = vec![0.0; k];
    let mut total = 0.0;
    let mut degenerate = false;

    for (i, x) in data.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != dim {
            return Err(Error::InvalidShape(format!(
                "point {i} has dimension {}, mixture has {dim}",
                x.len()
            )));
        }
        for n in 0..k {
            row[n] = log_weights[n] + factors[n].log_density(&estimate.components[n].mean, x, &mut scratch);
        }
        let lse = log_sum_exp(&row);
        if lse.is_finite() {
            for n in 0..k {
                matrix[(i, n)] = (row[n] - lse).exp();
            }
        } else {
            degenerate = true;
            for n in 0..k {
                matrix[(i, n)] = 1.0 / k as f64;
            }
        }
        total += lse;
    }

    Ok(Responsibilities {
        matrix,
        mean_log_likelihood: total / data.len() as f64,
        degenerate,
    })
}

/// Weighted maximum-likelihood update of all components.
///
/// A component whose total responsibility falls below `1e-12` is re-seeded at
/// the least-claimed data point (lowest maximum responsibility, lowest index
/// on ties) with the pooled data covariance, and the result is flagged
/// degenerate.
pub fn m_step<V: AsRef<[f64]>>(
    data: &[V],
    responsibilities: &Responsibilities,
    config: &EmConfig,
) -> Result<MixtureEstimate> {
    let dim = check_data(data)?;
    let resp = &responsibilities.matrix;
    let n_points = data.len();
    if resp.nrows() != n_points {
        return Err(Error::InvalidShape(format!(
            "responsibilities have {} rows for {n_points} points",
            resp.nrows()
        )));
    }
    let k = resp.ncols();
    let mut components = Vec::with_capacity(k);
    let mut starved = Vec::new();

    for n in 0..k {
        let weights: Vec<f64> = (0..n_points)
            .map(|i| resp[(i, n)].max(config.min_responsibility_floor))
            .collect();
        let total: f64 = weights.iter().sum();
        if total < 1e-12 {
            starved.push(n);
            components.push(None);
            continue;
        }
        let (mean, covariance) = weighted_moments(data, &weights, total, dim, config.reg);
        components.push(Some(GaussianComponent {
            mean,
            covariance,
            weight: total / n_points as f64,
        }));
    }

    let mut degenerate = responsibilities.degenerate;
    if !starved.is_empty() {
        degenerate = true;
        let uniform = vec![1.0; n_points];
        let (_, pooled) = weighted_moments(data, &uniform, n_points as f64, dim, config.reg);
        let mut order: Vec<usize> = (0..n_points).collect();
        let max_resp: Vec<f64> = (0..n_points)
            .map(|i| resp.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        order.sort_by(|&a, &b| max_resp[a].total_cmp(&max_resp[b]).then(a.cmp(&b)));
        for (slot, &n) in starved.iter().enumerate() {
            let point = order[slot % n_points];
            components[n] = Some(GaussianComponent {
                mean: DVector::from_column_slice(data[point].as_ref()),
                covariance: pooled.clone(),
                weight: 1.0 / n_points as f64,
            });
        }
    }

    let mut components: Vec<GaussianComponent> = components.into_iter().flatten().collect();
    let weight_sum: f64 = components.iter().map(|c| c.weight).sum();
    for c in &mut components {
        c.weight /= weight_sum;
    }

    Ok(MixtureEstimate {
        components,
        seed: 0,
        log_likelihood: f64::NEG_INFINITY,
        trajectory: Vec::new(),
        converged: false,
        iterations: 0,
        degenerate,
    })
}

/// Weighted mean and scatter (`/ total`) plus `reg * I`, symmetrized.
pub(crate) fn weighted_moments<V: AsRef<[f64]>>(
    data: &[V],
    weights: &[f64],
    total: f64,
    dim: usize,
    reg: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = DVector::zeros(dim);
    for (x, &w) in data.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(x.as_ref()) {
            *m += w * v;
        }
    }
    mean /= total;

    let mut cov = DMatrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (x, &w) in data.iter().zip(weights) {
        for (d, (v, m)) in diff.iter_mut().zip(x.as_ref().iter().zip(mean.iter())) {
            *d = v - m;
        }
        for a in 0..dim {
            let wa = w * diff[a];
            for b in 0..=a {
                cov[(a, b)] += wa * diff[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..=a {
            let v = cov[(a, b)] / total;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
        cov[(a, a)] += reg;
    }
    (mean, cov)
}

/// Two component means closer than this (max-abs) are treated as collapsed.
const COLLAPSE_EPS: f64 = 1e-12;

fn has_collapsed_means(estimate: &MixtureEstimate) -> bool {
    let c = &estimate.components;
    (0..c.len()).any(|a| (a + 1..c.len()).any(|b| (&c[a].mean - &c[b].mean).amax() <= COLLAPSE_EPS))
}

/// k-means initialization followed by EM until the mean log-likelihood moves
/// by less than `config.tol` or `config.max_iter` iterations have run.
///
/// Deterministic in `(data, seed, config)`.
pub fn fit_em<V: AsRef<[f64]>>(
    data: &[V],
    n_components: usize,
    seed: u64,
    config: &EmConfig,
) -> Result<MixtureEstimate> {
    config.validate()?;
    let initial = kmeans_init(data, n_components, seed, config.reg)?;
    fit_em_from(data, initial, config)
}

/// Runs EM from a given starting mixture. The result keeps `initial.seed`.
pub fn fit_em_from<V: AsRef<[f64]>>(
    data: &[V],
    initial: MixtureEstimate,
    config: &EmConfig,
) -> Result<MixtureEstimate> {
    config.validate()?;
    check_data(data)?;
    let mut estimate = initial;
    let mut degenerate = false;

    let mut factors = ComponentFactor::all(&estimate)?;
    let mut resp = e_step_with(data, &estimate, &factors)?;
    degenerate |= resp.degenerate;
    let mut trajectory = vec![resp.mean_log_likelihood];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        let next = m_step(data, &resp, config)?;
        degenerate |= next.degenerate;
        estimate.components = next.components;
        factors = ComponentFactor::all(&estimate)?;
        resp = e_step_with(data, &estimate, &factors)?;
        degenerate |= resp.degenerate;
        let prev = *trajectory.last().expect("trajectory starts non-empty");
        trajectory.push(resp.mean_log_likelihood);
        iterations = it;
        if (resp.mean_log_likelihood - prev).abs() < config.tol {
            converged = true;
            break;
        }
    }

    estimate.log_likelihood = *trajectory.last().expect("non-empty");
    estimate.trajectory = trajectory;
    estimate.converged = converged;
    estimate.iterations = iterations;
    estimate.degenerate = degenerate || has_collapsed_means(&estimate);
    Ok(estimate)
}

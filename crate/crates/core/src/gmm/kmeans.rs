//! k-means++ seeding with Lloyd refinement, used to initialize EM.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_data, weighted_moments, GaussianComponent, MixtureEstimate};
use crate::error::{Error, Result};

/// Upper bound on Lloyd iterations.
pub const KMEANS_MAX_ITER: usize = 50;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus<V: AsRef<[f64]>>(data: &[V], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = data
        .iter()
        .map(|x| sq_dist(x.as_ref(), data[chosen[0]].as_ref()))
        .collect();

    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(sampler) => sampler.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => (0..n).find(|i| !chosen.contains(i)).unwrap_or(0),
        };
        chosen.push(next);
        let c = data[next].as_ref();
        for (d, x) in dist.iter_mut().zip(data) {
            *d = d.min(sq_dist(x.as_ref(), c));
        }
    }
    chosen.iter().map(|&i| data[i].as_ref().to_vec()).collect()
}

/// Moves one point into each empty cluster: the point farthest from its own
/// centroid among clusters that can spare a member (lowest index on ties).
fn fill_empty<V: AsRef<[f64]>>(data: &[V], centroids: &mut [Vec<f64>], labels: &mut [usize], counts: &mut [usize]) {
    for empty in 0..centroids.len() {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, x) in data.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(x.as_ref(), &centroids[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("|data| >= k leaves a cluster with two members");
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        centroids[empty] = data[i].as_ref().to_vec();
    }
}

/// Hard clustering into `k` groups, turned into a mixture: centroids become
/// means, within-cluster (population) covariances plus `reg * I` become
/// covariances, and cluster fractions become weights.
pub fn kmeans_init<V: AsRef<[f64]>>(data: &[V], k: usize, seed: u64, reg: f64) -> Result<MixtureEstimate> {
    if k == 0 {
        return Err(Error::InvalidConfig("number of components must be positive".into()));
    }
    if data.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: data.len(),
        });
    }
    let dim = check_data(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(data, k, &mut rng);
    let mut labels = vec![usize::MAX; data.len()];

    for _ in 0..KMEANS_MAX_ITER {
        let mut next: Vec<usize> = data.iter().map(|x| nearest(x.as_ref(), &centroids).0).collect();
        let mut counts = vec![0usize; k];
        for &l in &next {
            counts[l] += 1;
        }
        fill_empty(data, &mut centroids, &mut next, &mut counts);

        for (j, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            for (x, _) in data.iter().zip(&next).filter(|(_, &l)| l == j) {
                for (s, v) in sum.iter_mut().zip(x.as_ref()) {
                    *s += v;
                }
            }
            *centroid = sum.into_iter().map(|s| s / counts[j] as f64).collect();
        }

        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }

    let n = data.len() as f64;
    let components = (0..k)
        .map(|j| {
            let weights: Vec<f64> = labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect();
            let count: f64 = weights.iter().sum();
            let (_, covariance) = weighted_moments(data, &weights, count, dim, reg);
            GaussianComponent {
                mean: DVector::from_vec(centroids[j].clone()),
                covariance,
                weight: count / n,
            }
        })
        .collect();

    Ok(MixtureEstimate {
        components,
        seed,
        log_likelihood: f64::NEG_INFINITY,
        trajectory: Vec::new(),
        converged: false,
        iterations: 0,
        degenerate: false,
    })
}

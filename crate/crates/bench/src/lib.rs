//! Benchmark fixtures shared by the criterion benches.

use protocal_core::synth::{sample_scenario, ScenarioSpec};
use protocal_core::{to_representation, LogitVector, PredictionVector, Representation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Estimate split of the biased binary scenario with `n` vectors.
pub fn biased_estimate_set(n: usize, seed: u64) -> Vec<LogitVector> {
    let spec = ScenarioSpec {
        n_estimate: n,
        n_test: 0,
        ..ScenarioSpec::biased_binary(seed)
    };
    sample_scenario(&spec).expect("preset scenario is valid").estimate
}

/// Log-prob vectors for `n` classes: `per_class` draws around each one-hot
/// logit center.
pub fn multiclass_log_probs(n: usize, per_class: usize, seed: u64) -> Vec<PredictionVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * per_class)
        .map(|i| {
            let k = i % n;
            let o: Vec<f64> = (0..n)
                .map(|j| if j == k { 2.0 } else { 0.0 } + rng.random_range(-0.8..0.8))
                .collect();
            to_representation(&LogitVector::new(o).expect("finite"), Representation::LogProb)
        })
        .collect()
}

/// Square matrix of log-probability-like entries in `[-8, 0)`.
pub fn mean_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-8.0..0.0)).collect())
        .collect()
}

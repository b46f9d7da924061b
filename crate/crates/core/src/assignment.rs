//! Cluster-to-label matching.
//!
//! Entry `mean[n][l]` of a fitted mixture measures how strongly cluster `n`
//! belongs to label `l`. The assignment score of a permutation is the sum of
//! the entries it selects, and the best permutation is found with the
//! Kuhn–Munkres (Hungarian) algorithm on the negated mean matrix.
//!
//! Among permutations with equal score the lexicographically smallest mapping
//! wins, both here and in the exhaustive oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::MixtureEstimate;

/// Largest class count the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX: usize = 9;

/// Cluster `n` is assigned to label `mapping[n]` (both zero-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabelAssignment {
    pub mapping: Vec<usize>,
    pub score: f64,
}

impl ClusterLabelAssignment {
    pub fn label_of(&self, cluster: usize) -> usize {
        self.mapping[cluster]
    }

    /// Cluster assigned to each label.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.mapping.len()];
        for (n, &l) in self.mapping.iter().enumerate() {
            inv[l] = n;
        }
        inv
    }
}

fn check_permutation(mapping: &[usize], n: usize) -> Result<()> {
    if mapping.len() != n {
        return Err(Error::InvalidAssignment(format!(
            "mapping has {} entries for {n} clusters",
            mapping.len()
        )));
    }
    let mut seen = vec![false; n];
    for &l in mapping {
        if l >= n || seen[l] {
            return Err(Error::InvalidAssignment(format!("{mapping:?} is not a permutation")));
        }
        seen[l] = true;
    }
    Ok(())
}

fn check_square(means: &[Vec<f64>]) -> Result<usize> {
    let n = means.len();
    if n == 0 {
        return Err(Error::InvalidEstimate("mixture has no components".into()));
    }
    if means.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidEstimate(format!(
            "component means must be {n}-dimensional to match {n} labels"
        )));
    }
    if means.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidEstimate(
            "component means contain non-finite values".into(),
        ));
    }
    Ok(n)
}

/// Sum of `means[n][mapping[n]]`, accumulated in cluster order.
pub fn cla_score_of(means: &[Vec<f64>], mapping: &[usize]) -> Result<f64> {
    check_permutation(mapping, means.len())?;
    if means.iter().any(|row| row.len() != means.len()) {
        return Err(Error::InvalidEstimate("mean matrix is not square".into()));
    }
    Ok(sum_selected(means, mapping))
}

fn sum_selected(means: &[Vec<f64>], mapping: &[usize]) -> f64 {
    mapping.iter().enumerate().map(|(n, &l)| means[n][l]).sum()
}

pub fn cla_score(estimate: &MixtureEstimate, mapping: &[usize]) -> Result<f64> {
    cla_score_of(&estimate.mean_matrix(), mapping)
}

/// Optimal matching plus the dual potentials that certify it.
struct Hungarian {
    /// `row -> column`.
    assignment: Vec<usize>,
    /// 1-based row potentials.
    u: Vec<f64>,
    /// 1-based column potentials.
    v: Vec<f64>,
}

/// Minimum-cost perfect matching on a square matrix.
fn hungarian_min(cost: &[Vec<f64>]) -> Hungarian {
    let n = cost.len();
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    Hungarian { assignment, u, v }
}

/// Finds `row` a new allowed column, displacing owners along an alternating
/// path that ends at the unowned column `target`. Commits only on success.
fn reroute(
    row: usize,
    target: usize,
    allowed: &[Vec<usize>],
    col_owner: &mut [usize],
    row_col: &mut [usize],
    seen: &mut [bool],
) -> bool {
    for &c in &allowed[row] {
        if seen[c] {
            continue;
        }
        seen[c] = true;
        let holder = col_owner[c];
        if c == target || reroute(holder, target, allowed, col_owner, row_col, seen) {
            col_owner[c] = row;
            row_col[row] = c;
            return true;
        }
    }
    false
}

/// Maximum-score permutation of a square mean matrix. Among optimal
/// permutations the lexicographically smallest mapping is returned.
pub fn solve_max_assignment(means: &[Vec<f64>]) -> Result<ClusterLabelAssignment> {
    let n = check_square(means)?;
    let cost: Vec<Vec<f64>> = means.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let Hungarian {
        assignment: first,
        u,
        v,
    } = hungarian_min(&cost);

    // Every optimal permutation uses only edges of zero reduced cost under
    // the optimal potentials; slack absorbs rounding in the potentials.
    let scale: f64 = means
        .iter()
        .map(|row| row.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .sum();
    let slack = 1e-12 * (1.0 + scale);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[i][j] - u[i + 1] - v[j + 1] <= slack || j == first[i])
                .collect()
        })
        .collect();

    // Fix rows in order, each to its smallest tight column that still admits
    // a tight perfect matching of the remaining rows.
    let mut row_col = first;
    let mut col_owner = vec![0; n];
    for (r, &c) in row_col.iter().enumerate() {
        col_owner[c] = r;
    }
    let mut fixed_cols = vec![false; n];
    for row in 0..n {
        for &l in &tight[row] {
            if l >= row_col[row] {
                break;
            }
            if fixed_cols[l] {
                continue;
            }
            // Row takes `l`; its displaced owner must reach the column `row` frees.
            let freed = row_col[row];
            let displaced = col_owner[l];
            let (mut owner2, mut rc2) = (col_owner.clone(), row_col.clone());
            owner2[l] = row;
            rc2[row] = l;
            let allowed: Vec<Vec<usize>> = tight
                .iter()
                .map(|cols| cols.iter().copied().filter(|&c| !fixed_cols[c] && c != l).collect())
                .collect();
            let mut seen = vec![false; n];
            seen[l] = true;
            if reroute(displaced, freed, &allowed, &mut owner2, &mut rc2, &mut seen) {
                col_owner = owner2;
                row_col = rc2;
                break;
            }
        }
        fixed_cols[row_col[row]] = true;
    }
    let mapping = row_col;

    let score = sum_selected(means, &mapping);
    Ok(ClusterLabelAssignment { mapping, score })
}

pub fn optimal_assignment(estimate: &MixtureEstimate) -> Result<ClusterLabelAssignment> {
    solve_max_assignment(&estimate.mean_matrix())
}

/// Advances `perm` to the next permutation in lexicographic order.
fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = (1..perm.len()).rev().find(|&i| perm[i - 1] < perm[i]) else {
        return false;
    };
    let j = (i..perm.len())
        .rev()
        .find(|&j| perm[j] > perm[i - 1])
        .expect("pivot exists");
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Exhaustive search over all `N!` permutations of a square mean matrix.
pub fn brute_force_max_assignment(means: &[Vec<f64>]) -> Result<ClusterLabelAssignment> {
    let n = means.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::OracleTooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    check_square(means)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = ClusterLabelAssignment {
        mapping: perm.clone(),
        score: sum_selected(means, &perm),
    };
    while next_permutation(&mut perm) {
        let score = sum_selected(means, &perm);
        if score > best.score {
            best = ClusterLabelAssignment {
                mapping: perm.clone(),
                score,
            };
        }
    }
    Ok(best)
}

pub fn brute_force_assignment(estimate: &MixtureEstimate) -> Result<ClusterLabelAssignment> {
    brute_force_max_assignment(&estimate.mean_matrix())
}

//! Exact optimal transport for validation: the 1-D quantile coupling and
//! brute-force assignment over all permutations.

use super::cost::{raw_cost, CostSpec};
use super::distribution::DiscreteDistribution;
use crate::error::{Error, Result};

/// Largest instance `exact_ot_small` will enumerate (8! permutations).
pub const MAX_EXACT_POINTS: usize = 8;

/// Exact W1 between two weighted point sets on the real line, by matching the
/// quantile functions of their empirical CDFs.
pub fn exact_ot_1d(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::invalid(format!(
            "exact 1-D transport needs dimension 1, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let sorted = |d: &DiscreteDistribution| {
        let mut v: Vec<(f64, f64)> = d
            .points()
            .iter()
            .zip(d.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&x, &w)| (x as f64, w))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let xs = sorted(mu);
    let ys = sorted(nu);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut left_x, mut left_y) = (xs[0].1, ys[0].1);
    let mut total = 0.0;
    while i < xs.len() && j < ys.len() {
        let step = left_x.min(left_y);
        total += step * (xs[i].0 - ys[j].0).abs();
        left_x -= step;
        left_y -= step;
        // Whichever side ran out (possibly both, up to rounding) advances.
        if left_x <= left_y {
            i += 1;
            if i < xs.len() {
                left_x += xs[i].1;
            }
        } else {
            j += 1;
            if j < ys.len() {
                left_y += ys[j].1;
            }
        }
    }
    Ok(total)
}

/// Minimum mean matched cost over all `n!` assignments between two uniform
/// point sets of equal size `n <= 8`.
pub fn exact_ot_small(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
) -> Result<f64> {
    exact_assignment_small(mu, nu, spec).map(|(v, _)| v)
}

/// Like [`exact_ot_small`] but also returns the optimal permutation
/// (`perm[i]` is the column matched to row `i`). Among equal-cost matchings
/// the lexicographically first permutation wins.
pub fn exact_assignment_small(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
) -> Result<(f64, Vec<usize>)> {
    let n = mu.len();
    if n != nu.len() || n > MAX_EXACT_POINTS {
        return Err(Error::invalid(format!(
            "exact assignment needs n == m <= {MAX_EXACT_POINTS}, got {n} and {}",
            nu.len()
        )));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::invalid("exact assignment needs uniform weights"));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let cost: Vec<f64> = (0..n * n)
        .map(|k| raw_cost(mu.point(k / n), nu.point(k % n), spec.metric))
        .collect();
    let scale = match spec.normalization {
        super::cost::Normalization::None => 1.0,
        super::cost::Normalization::MeanScale => {
            let mean = cost.iter().sum::<f64>() / (n * n) as f64;
            if mean > 0.0 {
                1.0 / mean
            } else {
                1.0
            }
        }
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut best_perm = perm.clone();
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        if total < best {
            best = total;
            best_perm.copy_from_slice(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best * scale / n as f64, best_perm))
}

/// Advances to the next permutation in lexicographic order; false at the last.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

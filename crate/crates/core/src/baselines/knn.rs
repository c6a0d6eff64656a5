//! Nearest-neighbour selection around each target point.

use rayon::prelude::*;

use super::ngram::fnv1a64;
use crate::error::{Error, Result};
use crate::gradient::{SelectionMethod, SelectionResult};
use crate::ot::DiscreteDistribution;

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// The `limit` nearest candidates of `query`, nearest first, ties by index.
fn nearest(candidate: &DiscreteDistribution, query: &[f32], limit: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = (0..candidate.len())
        .map(|i| (squared_distance(candidate.point(i), query), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let limit = limit.min(all.len());
    if limit < all.len() {
        all.select_nth_unstable_by(limit, by_distance);
        all.truncate(limit);
    }
    all.sort_unstable_by(by_distance);
    all
}

/// splitmix64 finalizer. FNV-1a alone orders short numeric ids in long
/// runs, which would hand early turns to one block of targets.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order in which targets take turns: by mixed FNV-1a hash of the id, then
/// index.
pub fn target_order(target: &DiscreteDistribution) -> Vec<usize> {
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by_key(|&j| (mix64(fnv1a64(target.ids()[j].as_bytes())), j));
    order
}

/// Round-robin k-nearest-neighbour selection.
///
/// With `k = ceil(budget / m)`, targets take turns in [`target_order`]; on
/// each turn a target claims its nearest candidate not yet claimed. Rounds
/// repeat until `budget` candidates are claimed or the pool is exhausted.
/// When `budget` is a multiple of `m` every target ends with exactly `k`
/// distinct neighbours; otherwise the last round is cut short, so the
/// selection still covers the targets evenly. Distances are exact squared
/// L2 in double precision; the score is the L2 distance to the claiming
/// target.
pub fn knn_select(
    candidate: &DiscreteDistribution,
    target: &DiscreteDistribution,
    budget: usize,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::invalid("selection budget must be at least 1"));
    }
    if candidate.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: candidate.dim(),
        });
    }
    let (n, m) = (candidate.len(), target.len());
    let budget_eff = budget.min(n);
    let k = budget.div_ceil(m);
    // Claims by other targets can push a target past its first k neighbours;
    // lists are refilled with a larger window when that happens.
    let initial = (2 * k + 8).min(n);
    let mut lists: Vec<Vec<(f64, usize)>> = (0..m)
        .into_par_iter()
        .map(|j| nearest(candidate, target.point(j), initial))
        .collect();
    let mut cursor = vec![0usize; m];
    let mut claimed = vec![false; n];
    let order = target_order(target);

    let mut result = SelectionResult::new(SelectionMethod::Knn, budget);
    'rounds: while result.len() < budget_eff {
        for &j in &order {
            if result.len() == budget_eff {
                break 'rounds;
            }
            loop {
                if cursor[j] == lists[j].len() {
                    let wider = (lists[j].len() * 4).min(n);
                    lists[j] = nearest(candidate, target.point(j), wider);
                }
                let (d, i) = lists[j][cursor[j]];
                cursor[j] += 1;
                if !claimed[i] {
                    claimed[i] = true;
                    result.push(candidate.ids()[i].clone(), d.sqrt());
                    break;
                }
            }
        }
    }
    result.meta("candidates", n).meta("targets", m).meta("k", k);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, prefix: &str) -> DiscreteDistribution {
        let pts = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        DiscreteDistribution::new(pts, dim, None, (0..n).map(|i| format!("{prefix}{i}")).collect()).unwrap()
    }

    /// Same round-robin rule over fully sorted neighbour lists.
    fn brute_force(c: &DiscreteDistribution, t: &DiscreteDistribution, budget: usize) -> Vec<String> {
        let mut sorted: Vec<Vec<usize>> = Vec::new();
        for j in 0..t.len() {
            let mut idx: Vec<usize> = (0..c.len()).collect();
            let d = |i: usize| squared_distance(c.point(i), t.point(j));
            idx.sort_by(|&a, &b| d(a).partial_cmp(&d(b)).unwrap().then(a.cmp(&b)));
            sorted.push(idx);
        }
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by_key(|&j| (mix64(fnv1a64(t.ids()[j].as_bytes())), j));
        let mut taken = vec![false; c.len()];
        let mut out = Vec::new();
        while out.len() < budget.min(c.len()) {
            for &j in &order {
                if out.len() == budget.min(c.len()) {
                    break;
                }
                let i = *sorted[j].iter().find(|&&i| !taken[i]).unwrap();
                taken[i] = true;
                out.push(c.ids()[i].clone());
            }
        }
        out
    }

    #[test]
    fn target_inside_candidates_selects_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cloud(&mut rng, 50, 3, "c");
        let picks = [3usize, 17, 22, 40];
        let t = c.subset_uniform(&picks).unwrap();
        let r = knn_select(&c, &t, picks.len()).unwrap();
        let mut got = r.selected_ids.clone();
        got.sort();
        let mut want: Vec<String> = picks.iter().map(|i| format!("c{i}")).collect();
        want.sort();
        assert_eq!(got, want);
        assert!(r.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..12 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..200);
            let m = rng.random_range(1..200);
            let c = cloud(&mut rng, n, 4, "c");
            let t = cloud(&mut rng, m, 4, "t");
            let budget = rng.random_range(1..2 * n + 5);
            let r = knn_select(&c, &t, budget).unwrap();
            assert_eq!(r.selected_ids, brute_force(&c, &t, budget), "seed {seed}");
        }
    }

    #[test]
    fn unique_and_budgeted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cloud(&mut rng, 30, 2, "c");
        let t = cloud(&mut rng, 7, 2, "t");
        for budget in [1, 6, 7, 8, 29, 30, 31, 100] {
            let r = knn_select(&c, &t, budget).unwrap();
            assert_eq!(r.len(), budget.min(30));
            let mut ids = r.selected_ids.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), r.len());
        }
    }

    #[test]
    fn turn_order_mixes_id_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = cloud(&mut rng, 1000, 1, "");
        let t = DiscreteDistribution::new(t.points().to_vec(), 1, None, (0..1000).map(|i| i.to_string()).collect())
            .unwrap();
        let upper = target_order(&t)[..100].iter().filter(|&&j| j >= 500).count();
        assert!((35..=65).contains(&upper), "{upper}");
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cloud(&mut rng, 3, 2, "c");
        let t = cloud(&mut rng, 3, 3, "t");
        assert!(knn_select(&c, &t, 1).is_err());
        assert!(knn_select(&c, &c, 0).is_err());
    }
}

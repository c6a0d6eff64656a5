//! Calibrated gradients of the transport distance with respect to candidate
//! mass, the budgeted ranking built on them, and the finite-difference and
//! Taylor-expansion checks that validate both.

mod selection;

pub use selection::{
    select_got_d, JsonlRecord, SelectionMethod, SelectionMode, SelectionResult, TIMING_PREFIX,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::{sinkhorn, CostSpec, DiscreteDistribution, OtSolution, SinkhornConfig};

/// Per-candidate gradient of the transport distance to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedGradients {
    pub ids: Vec<String>,
    pub grad: Vec<f64>,
}

impl CalibratedGradients {
    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }
}

/// `f_i` minus the mean of the other potentials.
///
/// The projection of the raw dual onto the tangent space of the simplex, so
/// adding a constant to `dual_f` leaves the result unchanged.
pub fn calibrate(dual_f: &[f64]) -> Result<Vec<f64>> {
    let n = dual_f.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "calibration needs at least two candidates, got {n}; with a single candidate select it directly"
        )));
    }
    // Centering on the first entry first keeps large offsets out of the sum.
    let origin = dual_f[0];
    let centered: Vec<f64> = dual_f.iter().map(|f| f - origin).collect();
    let total: f64 = centered.iter().sum();
    let others = (n - 1) as f64;
    Ok(centered.iter().map(|&f| f - (total - f) / others).collect())
}

/// Calibrated gradients from a solve of `(candidate, target)`.
pub fn calibrate_gradients(
    solution: &OtSolution,
    candidate: &DiscreteDistribution,
) -> Result<CalibratedGradients> {
    if solution.dual_f.len() != candidate.len() {
        return Err(Error::DimensionMismatch {
            expected: candidate.len(),
            found: solution.dual_f.len(),
        });
    }
    Ok(CalibratedGradients {
        ids: candidate.ids().to_vec(),
        grad: calibrate(&solution.dual_f)?,
    })
}

/// Central difference of the transport value when the raw mass of candidate
/// `index` moves by `±delta` and all weights are renormalized.
///
/// The renormalized weights move along `e_i - a`, so the difference quotient
/// is divided by `1 - a_i`; for uniform weights this matches the calibrated
/// gradient.
pub fn finite_difference_gradient(
    candidate: &DiscreteDistribution,
    target: &DiscreteDistribution,
    spec: CostSpec,
    cfg: &SinkhornConfig,
    index: usize,
    delta: f64,
) -> Result<f64> {
    let n = candidate.len();
    if index >= n {
        return Err(Error::invalid(format!("index {index} out of range for {n} candidates")));
    }
    if n < 2 {
        return Err(Error::invalid("finite differences need at least two candidates"));
    }
    let a_i = candidate.weights()[index];
    if !(delta > 0.0 && delta < a_i) {
        return Err(Error::invalid(format!(
            "delta {delta} must lie in (0, {a_i}) so the perturbed weight stays non-negative"
        )));
    }
    let perturbed = |step: f64| -> Result<f64> {
        let norm = 1.0 + step;
        let weights = candidate
            .weights()
            .iter()
            .enumerate()
            .map(|(k, &w)| if k == index { (w + step) / norm } else { w / norm })
            .collect();
        let mu = candidate.with_weights(weights)?;
        Ok(sinkhorn(&mu, target, spec, cfg)?.value)
    };
    let plus = perturbed(delta)?;
    let minus = perturbed(-delta)?;
    Ok((plus - minus) / (2.0 * delta * (1.0 - a_i)))
}

/// The mixture `lambda * update + (1 - lambda) * base`.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub lambda: f64,
    pub base: DiscreteDistribution,
    pub update: DiscreteDistribution,
}

impl MixtureSpec {
    pub fn new(lambda: f64, base: DiscreteDistribution, update: DiscreteDistribution) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::invalid(format!("mixture weight {lambda} must lie in [0, 1)")));
        }
        if base.dim() != update.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                found: update.dim(),
            });
        }
        Ok(Self { lambda, base, update })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.base.clone(), self.update.clone())
    }

    /// The mixture on the union support: base points first, then update
    /// points, so every lambda shares one point set and one cost matrix.
    pub fn mixture(&self) -> Result<DiscreteDistribution> {
        self.on_union(1.0 - self.lambda, self.lambda)
    }

    /// The base measure on the same union support (update points get zero
    /// mass).
    pub fn base_on_union(&self) -> Result<DiscreteDistribution> {
        self.on_union(1.0, 0.0)
    }

    fn on_union(&self, base_share: f64, update_share: f64) -> Result<DiscreteDistribution> {
        let mut points = self.base.points().to_vec();
        points.extend_from_slice(self.update.points());
        let weights = self
            .base
            .weights()
            .iter()
            .map(|w| w * base_share)
            .chain(self.update.weights().iter().map(|w| w * update_share))
            .collect();
        let ids = self
            .base
            .ids()
            .iter()
            .map(|id| format!("base:{id}"))
            .chain(self.update.ids().iter().map(|id| format!("update:{id}")))
            .collect();
        DiscreteDistribution::new(points, self.base.dim(), Some(weights), ids)
    }

    /// `update - base` as a weight vector on the union support.
    fn direction_weights(&self) -> Vec<f64> {
        self.base
            .weights()
            .iter()
            .map(|w| -w)
            .chain(self.update.weights().iter().copied())
            .collect()
    }
}

/// Base solve on the union support and the directional derivative
/// `sum_i (update_i - base_i) * f_i` it implies.
pub fn mixture_direction(
    mix: &MixtureSpec,
    target: &DiscreteDistribution,
    spec: CostSpec,
    cfg: &SinkhornConfig,
) -> Result<(OtSolution, f64)> {
    let base = sinkhorn(&mix.base_on_union()?, target, spec, cfg)?;
    let direction = mix
        .direction_weights()
        .iter()
        .zip(&base.dual_f)
        .map(|(d, f)| d * f)
        .sum();
    Ok((base, direction))
}

/// `|OT(mixture) - OT(base) - lambda * direction|`, the remainder of the
/// first-order expansion of the transport value along the mixture path.
pub fn taylor_gap(
    mix: &MixtureSpec,
    target: &DiscreteDistribution,
    gradients_direction: f64,
    spec: CostSpec,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let base = sinkhorn(&mix.base_on_union()?, target, spec, cfg)?.value;
    let mixed = sinkhorn(&mix.mixture()?, target, spec, cfg)?.value;
    Ok((mixed - base - mix.lambda * gradients_direction).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::Metric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> SinkhornConfig {
        SinkhornConfig {
            epsilon: 0.1,
            epsilon_min: 0.1,
            marginal_tolerance: 1e-11,
            ..SinkhornConfig::default()
        }
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, offset: f32) -> DiscreteDistribution {
        let pts = (0..n * dim).map(|_| rng.random::<f32>() + offset).collect();
        DiscreteDistribution::uniform_indexed(pts, dim).unwrap()
    }

    #[test]
    fn hand_example() {
        assert_eq!(calibrate(&[2.0, 0.0, 0.0]).unwrap(), [2.0, -1.0, -1.0]);
        assert_eq!(calibrate(&[5.5, 5.5, 5.5]).unwrap(), [0.0, 0.0, 0.0]);
        assert!(calibrate(&[1.0]).is_err());
    }

    #[test]
    fn shift_by_ten() {
        let f = [0.25, -1.5, 3.0, 0.125];
        let shifted: Vec<f64> = f.iter().map(|v| v + 10.0).collect();
        assert_eq!(calibrate(&f).unwrap(), calibrate(&shifted).unwrap());
    }

    #[test]
    fn solution_length_must_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 4, 2, 0.0);
        let b = cloud(&mut rng, 3, 2, 0.0);
        let sol = sinkhorn(&a, &b, CostSpec::default(), &tight()).unwrap();
        let g = calibrate_gradients(&sol, &a).unwrap();
        assert_eq!(g.ids, a.ids());
        assert!(calibrate_gradients(&sol, &b).is_err());
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = cloud(&mut rng, 12, 3, 0.0);
        let b = cloud(&mut rng, 9, 3, 0.4);
        let spec = CostSpec::default();
        let cfg = tight();
        let sol = sinkhorn(&a, &b, spec, &cfg).unwrap();
        let g = calibrate_gradients(&sol, &a).unwrap();
        for i in [0, 5, 11] {
            let fd = finite_difference_gradient(&a, &b, spec, &cfg, i, 1e-4).unwrap();
            let tol = (0.05 * g.grad[i].abs()).max(1e-3 * sol.mean_cost);
            assert!((fd - g.grad[i]).abs() <= tol, "index {i}: fd {fd} vs {}", g.grad[i]);
        }
    }

    #[test]
    fn finite_difference_near_zero_for_identical_sets() {
        // Evenly spaced points on a circle: every point sees the same
        // neighbourhood, so the entropic term carries no per-point bias.
        let n = 12;
        let pts = (0..n)
            .flat_map(|k| {
                let t = k as f32 * std::f32::consts::TAU / n as f32;
                [t.cos(), t.sin()]
            })
            .collect();
        let a = DiscreteDistribution::uniform_indexed(pts, 2).unwrap();
        let cfg = SinkhornConfig {
            epsilon: 0.1,
            epsilon_min: 0.03,
            marginal_tolerance: 1e-8,
            ..SinkhornConfig::default()
        };
        let sol = sinkhorn(&a, &a, CostSpec::default(), &cfg).unwrap();
        for i in 0..n {
            let fd = finite_difference_gradient(&a, &a, CostSpec::default(), &cfg, i, 1e-4).unwrap();
            assert!(fd.abs() <= 1e-3 * sol.mean_cost, "index {i}: {fd}");
        }
    }

    #[test]
    fn finite_difference_preconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(&mut rng, 4, 2, 0.0);
        let cfg = tight();
        let spec = CostSpec::default();
        assert!(finite_difference_gradient(&a, &a, spec, &cfg, 4, 1e-4).is_err());
        assert!(finite_difference_gradient(&a, &a, spec, &cfg, 0, 0.3).is_err());
        assert!(finite_difference_gradient(&a, &a, spec, &cfg, 0, 0.0).is_err());
    }

    #[test]
    fn mixture_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = cloud(&mut rng, 5, 2, 0.0);
        let update = cloud(&mut rng, 3, 2, 1.0);
        let mix = MixtureSpec::new(0.3, base, update).unwrap();
        let m = mix.mixture().unwrap();
        assert_eq!(m.len(), 8);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mix.with_lambda(1.0).is_err());
        assert!(mix.with_lambda(-0.1).is_err());
    }

    #[test]
    fn taylor_gap_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = cloud(&mut rng, 10, 2, 0.0);
        let target = cloud(&mut rng, 8, 2, 0.5);
        let update = cloud(&mut rng, 4, 2, 0.5);
        let spec = CostSpec::default();
        let cfg = tight();

        let mix = MixtureSpec::new(0.0, base.clone(), update).unwrap();
        let (_, dir) = mixture_direction(&mix, &target, spec, &cfg).unwrap();
        assert!(taylor_gap(&mix, &target, dir, spec, &cfg).unwrap() < 1e-9);

        let same = MixtureSpec::new(0.1, base.clone(), base).unwrap();
        let (_, dir) = mixture_direction(&same, &target, spec, &cfg).unwrap();
        assert!(dir.abs() < 1e-9);
        for lambda in [0.02, 0.08, 0.16] {
            let gap = taylor_gap(&same.with_lambda(lambda).unwrap(), &target, dir, spec, &cfg).unwrap();
            assert!(gap < 1e-9, "lambda {lambda}: {gap}");
        }
    }

    #[test]
    fn taylor_gap_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = cloud(&mut rng, 30, 2, 0.0);
        let target = cloud(&mut rng, 20, 2, 0.7);
        let update = cloud(&mut rng, 10, 2, 0.7);
        let spec = CostSpec::default();
        let cfg = tight();
        let mix = MixtureSpec::new(0.02, base, update).unwrap();
        let (_, dir) = mixture_direction(&mix, &target, spec, &cfg).unwrap();
        let gaps: Vec<f64> = [0.02, 0.04, 0.08, 0.16]
            .iter()
            .map(|&l| taylor_gap(&mix.with_lambda(l).unwrap(), &target, dir, spec, &cfg).unwrap())
            .collect();
        for w in gaps.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 3.0 && ratio < 5.0, "gaps {gaps:?}");
        }
    }

    #[test]
    fn selected_update_beats_random_update() {
        let spec = CostSpec::new(Metric::SquaredL2);
        let cfg = tight();
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let mut pts: Vec<f32> = Vec::new();
            for i in 0..n {
                let shift = if i % 4 == 0 { 3.0 } else { 0.0 };
                pts.push(rng.random::<f32>() + shift);
                pts.push(rng.random::<f32>());
            }
            let candidate = DiscreteDistribution::uniform_indexed(pts, 2).unwrap();
            let target = cloud(&mut rng, 15, 2, 1.5);
            let sol = sinkhorn(&candidate, &target, spec, &cfg).unwrap();
            let grads = calibrate_gradients(&sol, &candidate).unwrap();
            let picked = select_got_d(&grads, 8, SelectionMode::Clean).unwrap();
            let picked_idx: Vec<usize> = picked.selected_ids.iter().map(|id| id.parse().unwrap()).collect();
            let mut random_idx: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                random_idx.swap(i, rng.random_range(0..=i));
            }
            random_idx.truncate(8);
            for lambda in [0.01, 0.05] {
                let ot_for = |idx: &[usize]| {
                    let mix = MixtureSpec::new(lambda, candidate.clone(), candidate.subset_uniform(idx).unwrap()).unwrap();
                    sinkhorn(&mix.mixture().unwrap(), &target, spec, &cfg).unwrap().value
                };
                assert!(ot_for(&picked_idx) <= ot_for(&random_idx), "seed {seed} lambda {lambda}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn calibrated_gradients_sum_to_zero(f in proptest::collection::vec(-100.0f64..100.0, 2..50)) {
            let g = calibrate(&f).unwrap();
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            proptest::prop_assert!(mean.abs() < 1e-6);
        }

        #[test]
        fn shift_invariance(
            f in proptest::collection::vec(-100.0f64..100.0, 2..50),
            c in -1000.0f64..1000.0,
        ) {
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let a = calibrate(&f).unwrap();
            let b = calibrate(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                proptest::prop_assert!((x - y).abs() <= 1e-9 * (1.0 + c.abs()));
            }
        }
    }
}

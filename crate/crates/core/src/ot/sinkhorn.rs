use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::cost::{mean_cost, raw_cost, CostSpec, Normalization};
use super::distribution::DiscreteDistribution;
use super::kernel::{CostSource, Gemm, SweepInput};
use crate::error::{Error, Result};

/// Above this many entries the cost matrix is never held in memory.
pub const MAX_MATERIALIZED_ENTRIES: usize = 100_000_000;

/// Entries used to estimate the mean cost for non-squared-L2 metrics.
const MEAN_COST_PAIRS: usize = 4_000_000;

/// Intermediate epsilon stages only need a rough warm start.
const STAGE_TOLERANCE: f64 = 1e-3;

/// How `epsilon` and `epsilon_min` are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonScale {
    /// Multiples of the mean entry of the (normalized) cost matrix.
    MeanCost,
    /// Cost units.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// f64 when the cost matrix fits in memory, f32 when it is streamed.
    Auto,
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Starting regularization.
    pub epsilon: f64,
    /// Multiplier applied between stages, in (0, 1).
    pub epsilon_scaling_factor: f64,
    /// Final regularization; the returned potentials are solved at this value.
    pub epsilon_min: f64,
    pub epsilon_scale: EpsilonScale,
    /// Budget of full iterations across all stages.
    pub max_iterations: usize,
    /// L1 deviation of the plan's marginals at which the final stage stops.
    pub marginal_tolerance: f64,
    /// Row-block size for cost evaluation and parallel reduction.
    pub tile_rows: usize,
    /// Largest cost matrix (in entries) kept in memory, capped at
    /// [`MAX_MATERIALIZED_ENTRIES`].
    pub materialize_limit: usize,
    pub precision: Precision,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            epsilon_scaling_factor: 0.5,
            epsilon_min: 1e-3,
            epsilon_scale: EpsilonScale::MeanCost,
            max_iterations: 100_000,
            marginal_tolerance: 1e-6,
            tile_rows: 4096,
            materialize_limit: 1 << 25,
            precision: Precision::Auto,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("epsilon_min", self.epsilon_min)?;
        positive("marginal_tolerance", self.marginal_tolerance)?;
        if self.epsilon_min > self.epsilon {
            return Err(Error::invalid(format!(
                "epsilon_min {} exceeds epsilon {}",
                self.epsilon_min, self.epsilon
            )));
        }
        if !(self.epsilon_scaling_factor > 0.0 && self.epsilon_scaling_factor < 1.0) {
            return Err(Error::invalid("epsilon_scaling_factor must lie in (0, 1)"));
        }
        if self.max_iterations == 0 || self.tile_rows == 0 {
            return Err(Error::invalid("max_iterations and tile_rows must be positive"));
        }
        Ok(())
    }
}

/// Result of an entropic OT solve.
///
/// `value` is the regularized objective `<C,P> + eps * KL(P | a x b)` at the
/// final epsilon, equal to the dual objective `<a,f> + <b,g>`. The potentials
/// are gauge-fixed so that `<b, g> = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtSolution {
    pub value: f64,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
    pub iterations_used: usize,
    pub final_marginal_error: f64,
    pub epsilon_final: f64,
    /// `<C, P>` of the returned plan, without the entropy term.
    pub transport_cost: f64,
    /// Mean cost entry used to scale epsilon (after normalization).
    pub mean_cost: f64,
}

/// Serializable summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub value: f64,
    pub iterations_used: usize,
    pub final_marginal_error: f64,
    pub epsilon_final: f64,
}

impl OtSolution {
    pub fn diagnostics(&self) -> SolverDiagnostics {
        SolverDiagnostics {
            value: self.value,
            iterations_used: self.iterations_used,
            final_marginal_error: self.final_marginal_error,
            epsilon_final: self.epsilon_final,
        }
    }
}

/// Entropic optimal transport between `mu` and `nu` with epsilon scaling and
/// log-domain updates.
pub fn sinkhorn(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
    cfg: &SinkhornConfig,
) -> Result<OtSolution> {
    cfg.validate()?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let (n, m, dim) = (mu.len(), nu.len(), mu.dim());
    let raw_mean = mean_cost(mu.points(), nu.points(), dim, spec.metric, MEAN_COST_PAIRS);
    let scale = match spec.normalization {
        Normalization::None => 1.0,
        Normalization::MeanScale if raw_mean > 0.0 => 1.0 / raw_mean,
        Normalization::MeanScale => 1.0,
    };
    let mean = raw_mean * scale;
    let unit = match cfg.epsilon_scale {
        EpsilonScale::Absolute => 1.0,
        // All-zero costs: any positive epsilon gives the same (trivial) answer.
        EpsilonScale::MeanCost if mean > 0.0 => mean,
        EpsilonScale::MeanCost => 1.0,
    };
    let eps_min = cfg.epsilon_min * unit;

    if n == 1 || m == 1 {
        return Ok(single_point_solution(mu, nu, spec, scale, eps_min, mean));
    }

    let entries = n.saturating_mul(m);
    let materialize = entries <= cfg.materialize_limit.min(MAX_MATERIALIZED_ENTRIES);
    let use_f64 = match cfg.precision {
        Precision::F64 => true,
        Precision::F32 => false,
        Precision::Auto => materialize,
    };
    let schedule = epsilon_schedule(cfg.epsilon * unit, eps_min, cfg.epsilon_scaling_factor);
    let started = Instant::now();
    let solution = if use_f64 {
        let src = build_source::<f64>(mu, nu, spec, scale, materialize);
        solve(&src, mu, nu, cfg, &schedule, mean)
    } else {
        let src = build_source::<f32>(mu, nu, spec, scale, materialize);
        solve(&src, mu, nu, cfg, &schedule, mean)
    };
    if let Ok(sol) = &solution {
        log::debug!(
            "sinkhorn {n}x{m}: value {:.6e}, {} iterations, err {:.2e}, {:.2?}",
            sol.value,
            sol.iterations_used,
            sol.final_marginal_error,
            started.elapsed()
        );
    }
    solution
}

fn build_source<T: Gemm>(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
    scale: f64,
    materialize: bool,
) -> CostSource<T> {
    if materialize {
        CostSource::dense(mu.points(), nu.points(), mu.dim(), spec.metric, scale)
    } else {
        CostSource::streaming(mu.points(), nu.points(), mu.dim(), spec.metric, scale)
    }
}

pub(crate) fn epsilon_schedule(start: f64, min: f64, factor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut eps = start;
    while eps > min * (1.0 + 1e-12) {
        out.push(eps);
        eps *= factor;
    }
    out.push(min);
    out
}

fn solve<T: Gemm>(
    src: &CostSource<T>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cfg: &SinkhornConfig,
    schedule: &[f64],
    mean: f64,
) -> Result<OtSolution> {
    let log_a: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; mu.len()];
    let mut g = vec![0.0; nu.len()];
    let mut iterations = 0usize;
    let mut last_error = f64::INFINITY;

    for (stage, &eps) in schedule.iter().enumerate() {
        let last_stage = stage + 1 == schedule.len();
        let tol = if last_stage {
            cfg.marginal_tolerance
        } else {
            cfg.marginal_tolerance.max(STAGE_TOLERANCE)
        };
        // The first sweep of a stage measures potentials that were balanced
        // at the previous epsilon, so its error is not accepted.
        let mut sweeps_in_stage = 0usize;
        loop {
            if iterations >= cfg.max_iterations {
                return Err(Error::NotConverged {
                    iterations,
                    marginal_error: last_error,
                    tolerance: cfg.marginal_tolerance,
                });
            }
            let out = src.sweep(&SweepInput {
                log_a: &log_a,
                log_b: &log_b,
                f: &f,
                g: &g,
                eps,
                tile_rows: cfg.tile_rows,
            });
            iterations += 1;
            sweeps_in_stage += 1;
            last_error = out.row_error;
            if !out.f.iter().chain(&out.g).all(|v| v.is_finite()) {
                return Err(Error::NotConverged {
                    iterations,
                    marginal_error: f64::NAN,
                    tolerance: cfg.marginal_tolerance,
                });
            }
            if sweeps_in_stage > 1 && out.row_error <= tol {
                if last_stage {
                    return Ok(finish(f, g, mu, nu, iterations, out.row_error, eps, out.transport_cost, mean));
                }
                f = out.f;
                g = out.g;
                break;
            }
            f = out.f;
            g = out.g;
        }
    }
    unreachable!("schedule always ends with a final stage")
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mut f: Vec<f64>,
    mut g: Vec<f64>,
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    iterations: usize,
    error: f64,
    eps: f64,
    transport_cost: f64,
    mean: f64,
) -> OtSolution {
    let shift: f64 = nu.weights().iter().zip(&g).map(|(b, g)| b * g).sum();
    g.iter_mut().for_each(|v| *v -= shift);
    f.iter_mut().for_each(|v| *v += shift);
    let value: f64 = mu.weights().iter().zip(&f).map(|(a, f)| a * f).sum();
    OtSolution {
        value: value.max(0.0),
        dual_f: f,
        dual_g: g,
        iterations_used: iterations,
        final_marginal_error: error,
        epsilon_final: eps,
        transport_cost,
        mean_cost: mean,
    }
}

/// With one point on either side the only coupling is the product measure.
fn single_point_solution(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
    scale: f64,
    eps: f64,
    mean: f64,
) -> OtSolution {
    let c = |i: usize, j: usize| raw_cost(mu.point(i), nu.point(j), spec.metric) * scale;
    let (f, g) = if nu.len() == 1 {
        let f: Vec<f64> = (0..mu.len()).map(|i| c(i, 0)).collect();
        (f, vec![0.0])
    } else {
        let value: f64 = (0..nu.len()).map(|j| nu.weights()[j] * c(0, j)).sum();
        let g = (0..nu.len()).map(|j| c(0, j) - value).collect();
        (vec![value], g)
    };
    let value: f64 = mu.weights().iter().zip(&f).map(|(a, f)| a * f).sum();
    OtSolution {
        value,
        dual_f: f,
        dual_g: g,
        iterations_used: 0,
        final_marginal_error: 0.0,
        epsilon_final: eps,
        transport_cost: value,
        mean_cost: mean,
    }
}

/// Dense transport plan `P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)` implied
/// by a solution. Intended for small instances and diagnostics.
pub fn transport_plan(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    spec: CostSpec,
    solution: &OtSolution,
) -> Result<Vec<f64>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    if solution.dual_f.len() != mu.len() || solution.dual_g.len() != nu.len() {
        return Err(Error::invalid("solution does not match the distributions"));
    }
    let raw_mean = mean_cost(mu.points(), nu.points(), mu.dim(), spec.metric, MEAN_COST_PAIRS);
    let scale = match spec.normalization {
        Normalization::MeanScale if raw_mean > 0.0 => 1.0 / raw_mean,
        _ => 1.0,
    };
    let eps = solution.epsilon_final;
    let (n, m) = (mu.len(), nu.len());
    let mut plan = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = raw_cost(mu.point(i), nu.point(j), spec.metric) * scale;
            let mass = mu.weights()[i] * nu.weights()[j];
            plan[i * m + j] = if n == 1 || m == 1 {
                mass
            } else {
                mass * ((solution.dual_f[i] + solution.dual_g[j] - c) / eps).exp()
            };
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::cost::Metric;
    use crate::ot::exact::{exact_ot_1d, exact_ot_small};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DiscreteDistribution {
        let pts = (0..n * dim).map(|_| rng.random::<f32>()).collect();
        DiscreteDistribution::uniform_indexed(pts, dim).unwrap()
    }

    /// Generic weights: exact block balance between clusters (e.g. two
    /// uniform candidates filling one of two uniform targets) makes Sinkhorn
    /// converge at a rate of `1 - exp(-gap / eps)`.
    fn weighted_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DiscreteDistribution {
        let raw: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        cloud(rng, n, dim)
            .with_weights(raw.iter().map(|w| w / total).collect())
            .unwrap()
    }

    fn line(xs: &[f32]) -> DiscreteDistribution {
        DiscreteDistribution::uniform_indexed(xs.to_vec(), 1).unwrap()
    }

    fn fine(eps_min: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon_min: eps_min,
            ..SinkhornConfig::default()
        }
    }

    #[test]
    fn self_transport_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 30, 3);
        let sol = sinkhorn(&a, &a, CostSpec::default(), &fine(1e-3)).unwrap();
        assert!(sol.value <= 5.0 * sol.epsilon_final * (30f64).ln(), "{}", sol.value);
        assert!(sol.final_marginal_error <= 1e-6);
    }

    #[test]
    fn shifted_line_approaches_one() {
        let a = line(&[0.0, 1.0, 2.0, 3.0]);
        let b = line(&[1.0, 2.0, 3.0, 4.0]);
        let mut previous = f64::INFINITY;
        for eps in [5e-2, 1e-2, 1e-3, 1e-4] {
            let sol = sinkhorn(&a, &b, CostSpec::l1(), &fine(eps)).unwrap();
            assert!(sol.value <= previous + 1e-6);
            previous = sol.value;
        }
        assert!((previous - 1.0).abs() < 1e-3, "{previous}");
        assert_eq!(exact_ot_1d(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn five_point_brute_force() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 5, 2);
            let b = cloud(&mut rng, 5, 2);
            let spec = CostSpec::new(Metric::L2);
            let exact = exact_ot_small(&a, &b, spec).unwrap();
            let sol = sinkhorn(&a, &b, spec, &fine(1e-3)).unwrap();
            let rel = (sol.transport_cost - exact).abs() / exact;
            assert!(rel <= 1e-3, "seed {seed}: {} vs {exact}", sol.transport_cost);
            assert!((sol.value - exact).abs() / exact <= 1e-2);
        }
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(&mut rng, 20, 3);
        let b = cloud(&mut rng, 13, 3);
        let cfg = SinkhornConfig {
            marginal_tolerance: 1e-10,
            ..fine(1e-2)
        };
        for metric in [Metric::L1, Metric::L2, Metric::SquaredL2, Metric::Cosine] {
            let spec = CostSpec::new(metric);
            let ab = sinkhorn(&a, &b, spec, &cfg).unwrap().value;
            let ba = sinkhorn(&b, &a, spec, &cfg).unwrap().value;
            assert!((ab - ba).abs() <= 1e-6 * ab.abs().max(1e-12), "{metric:?}: {ab} vs {ba}");
        }
    }

    #[test]
    fn plan_marginals_match_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = cloud(&mut rng, 17, 2);
        let weights: Vec<f64> = (0..11).map(|k| (k + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        let b = cloud(&mut rng, 11, 2)
            .with_weights(weights.iter().map(|w| w / total).collect())
            .unwrap();
        let spec = CostSpec::default();
        let sol = sinkhorn(&a, &b, spec, &fine(1e-2)).unwrap();
        let plan = transport_plan(&a, &b, spec, &sol).unwrap();
        let rows: f64 = (0..17)
            .map(|i| (plan[i * 11..(i + 1) * 11].iter().sum::<f64>() - a.weights()[i]).abs())
            .sum();
        let cols: f64 = (0..11)
            .map(|j| ((0..17).map(|i| plan[i * 11 + j]).sum::<f64>() - b.weights()[j]).abs())
            .sum();
        assert!(rows <= sol.final_marginal_error + 1e-12, "{rows}");
        assert!(cols <= 1e-9, "{cols}");
        let g_mean: f64 = b.weights().iter().zip(&sol.dual_g).map(|(w, g)| w * g).sum();
        assert!(g_mean.abs() < 1e-12);
    }

    #[test]
    fn single_points() {
        let one = line(&[2.0]);
        let many = line(&[0.0, 1.0, 5.0]);
        let sol = sinkhorn(&one, &many, CostSpec::l1(), &SinkhornConfig::default()).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-12);
        let sol = sinkhorn(&many, &one, CostSpec::l1(), &SinkhornConfig::default()).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-12);
        assert_eq!(sol.dual_f, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let a = line(&[0.0, 1.0]);
        let b = DiscreteDistribution::uniform_indexed(vec![0.0; 4], 2).unwrap();
        assert!(matches!(
            sinkhorn(&a, &b, CostSpec::l1(), &SinkhornConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = SinkhornConfig {
            epsilon_min: 1.0,
            ..SinkhornConfig::default()
        };
        assert!(sinkhorn(&a, &a, CostSpec::l1(), &bad).is_err());
    }

    #[test]
    fn iteration_budget_reports_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 20, 2);
        let b = cloud(&mut rng, 20, 2);
        let cfg = SinkhornConfig {
            max_iterations: 3,
            ..fine(1e-3)
        };
        match sinkhorn(&a, &b, CostSpec::default(), &cfg) {
            Err(Error::NotConverged { iterations, marginal_error, .. }) => {
                assert_eq!(iterations, 3);
                assert!(marginal_error.is_finite());
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn large_cost_ratio_stays_finite() {
        let a = line(&[0.0, 100.0, 50.0]);
        let b = line(&[1.0, 99.0, 49.0]);
        let cfg = SinkhornConfig {
            epsilon_scale: EpsilonScale::Absolute,
            epsilon: 10.0,
            epsilon_min: 1e-2,
            ..SinkhornConfig::default()
        };
        let sol = sinkhorn(&a, &b, CostSpec::new(Metric::SquaredL2), &cfg).unwrap();
        assert!(sol.dual_f.iter().all(|v| v.is_finite()));
        assert!((sol.transport_cost - 1.0).abs() < 1e-6);
    }

    #[test]
    fn streaming_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = cloud(&mut rng, 300, 8);
        let b = cloud(&mut rng, 70, 8);
        for metric in [Metric::L1, Metric::L2, Metric::SquaredL2, Metric::Cosine] {
            let spec = CostSpec::new(metric);
            let dense = sinkhorn(&a, &b, spec, &fine(1e-2)).unwrap();
            for precision in [Precision::F64, Precision::F32] {
                let cfg = SinkhornConfig {
                    materialize_limit: 0,
                    tile_rows: 64,
                    precision,
                    ..fine(1e-2)
                };
                let streamed = sinkhorn(&a, &b, spec, &cfg).unwrap();
                let rel = (streamed.value - dense.value).abs() / dense.value;
                let bound = if precision == Precision::F64 { 1e-9 } else { 1e-4 };
                assert!(rel < bound, "{metric:?} {precision:?}: {rel}");
            }
        }
    }

    #[test]
    fn identical_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = cloud(&mut rng, 500, 4);
        let b = cloud(&mut rng, 90, 4);
        let cfg = SinkhornConfig {
            tile_rows: 37,
            materialize_limit: 0,
            ..fine(1e-2)
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sinkhorn(&a, &b, CostSpec::default(), &cfg).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }

    #[test]
    fn schedule_ends_at_minimum() {
        assert_eq!(epsilon_schedule(1.0, 0.25, 0.5), vec![1.0, 0.5, 0.25]);
        assert_eq!(epsilon_schedule(1.0, 0.3, 0.5), vec![1.0, 0.5, 0.3]);
        assert_eq!(epsilon_schedule(0.2, 0.2, 0.5), vec![0.2]);
    }

    #[test]
    fn slow_balanced_instance_needs_more_iterations() {
        // Sixteen uniform candidates over four uniform targets: exact 4:1
        // blocks leave a tiny contraction rate at eps_min = 1e-2.
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        let a = cloud(&mut rng, 16, 3);
        let b = cloud(&mut rng, 4, 3);
        match sinkhorn(&a, &b, CostSpec::default(), &fine(1e-2)) {
            Err(Error::NotConverged { marginal_error, .. }) => assert!(marginal_error < 1e-5, "{marginal_error}"),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let cfg = SinkhornConfig { max_iterations: 1_000_000, ..fine(1e-2) };
        let sol = sinkhorn(&a, &b, CostSpec::default(), &cfg).unwrap();
        assert!(sol.iterations_used > 100_000);
        assert!(sol.final_marginal_error <= cfg.marginal_tolerance);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn value_non_increasing_as_epsilon_shrinks(seed in 0u64..1000, n in 2usize..12, m in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = weighted_cloud(&mut rng, n, 2);
            let b = weighted_cloud(&mut rng, m, 2);
            let mut previous = f64::INFINITY;
            for eps in [0.05, 0.02, 0.01, 0.005] {
                let cfg = SinkhornConfig { marginal_tolerance: 1e-8, max_iterations: 1_000_000, ..fine(eps) };
                let v = sinkhorn(&a, &b, CostSpec::default(), &cfg).unwrap().value;
                proptest::prop_assert!(v <= previous + 1e-6);
                previous = v;
            }
        }

        #[test]
        fn marginal_error_within_tolerance(seed in 0u64..1000, n in 2usize..20, m in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, n, 3);
            let b = cloud(&mut rng, m, 3);
            let cfg = fine(1e-2);
            // Balanced uniform blocks can converge arbitrarily slowly; running
            // out of iterations must then be reported, not returned.
            let sol = match sinkhorn(&a, &b, CostSpec::default(), &cfg) {
                Ok(sol) => sol,
                Err(Error::NotConverged { iterations, marginal_error, tolerance }) => {
                    proptest::prop_assert_eq!(iterations, cfg.max_iterations);
                    proptest::prop_assert!(marginal_error > tolerance);
                    return Ok(());
                }
                Err(e) => return Err(proptest::test_runner::TestCaseError::fail(e.to_string())),
            };
            proptest::prop_assert!(sol.final_marginal_error <= cfg.marginal_tolerance);
            proptest::prop_assert!(sol.value >= 0.0);
            let plan = transport_plan(&a, &b, CostSpec::default(), &sol).unwrap();
            let rows: f64 = (0..n)
                .map(|i| (plan[i * m..(i + 1) * m].iter().sum::<f64>() - a.weights()[i]).abs())
                .sum();
            proptest::prop_assert!(rows <= cfg.marginal_tolerance + 1e-12);
        }
    }
}

//! Suite bodies. Every instance is drawn from a ChaCha8 stream seeded with
//! `opts.seed` plus the instance index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Map, Value};

use super::fixtures::{gaussian_rows, perf_catalog, random_weights, rng, Figure3};
use super::{Check, VerifyOptions};
use crate::baselines::{
    all_domains_select, dsir_select, knn_select, random_select, target_order, GumbelNoise, NGramFeatureModel,
    DEFAULT_BINS, DEFAULT_SMOOTHING,
};
use crate::data::{
    preprocess, read_corpus, read_embeddings, write_corpus, write_embeddings, CorpusRecord, EmbeddingFile,
    EmbeddingMatrix, PreprocessMode, NLG_LENGTH, NLU_LENGTH,
};
use crate::error::{Error, Result};
use crate::gradient::{
    calibrate_gradients, finite_difference_gradient, mixture_direction, select_got_d, taylor_gap, MixtureSpec,
    SelectionMode,
};
use crate::ot::{exact_ot_1d, exact_ot_small, sinkhorn, CostSpec, DiscreteDistribution, Metric, SinkhornConfig};
use crate::pipeline::{run_got_d, run_got_d_detailed, DomainCatalog, DomainEntry, PipelineConfig};

#[derive(Debug, Default)]
pub(super) struct Outcome {
    pub checks: Vec<Check>,
    pub config: Map<String, Value>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl Outcome {
    fn config(&mut self, key: &str, value: Value) {
        self.config.insert(key.into(), value);
    }

    fn diagnostic(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.into(), value);
    }

    fn runtime(&mut self, name: &str, started: Instant, limit_s: f64) {
        let elapsed = started.elapsed();
        self.checks.push(Check::at_most(name, elapsed.as_secs_f64(), limit_s, elapsed));
    }
}

fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn indexed_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Weighted 1-D sample from a Gaussian with random mean and spread.
fn line(rng: &mut ChaCha8Rng, n: usize) -> Result<DiscreteDistribution> {
    let mean: f32 = rng.random_range(-2.0..2.0);
    let sd: f32 = rng.random_range(0.2..2.0);
    let normal = Normal::new(mean, sd).expect("positive spread");
    let points = (0..n).map(|_| normal.sample(rng)).collect();
    let weights = random_weights(rng, n);
    DiscreteDistribution::new(points, 1, Some(weights), indexed_ids(n))
}

fn unit_cube(rng: &mut ChaCha8Rng, n: usize, dim: usize, low: f32, high: f32) -> Result<DiscreteDistribution> {
    let points = (0..n * dim).map(|_| rng.random_range(low..high)).collect();
    DiscreteDistribution::uniform_indexed(points, dim)
}

pub(super) fn oracle(opts: &VerifyOptions, out: &mut Outcome) -> Result<()> {
    let cfg = SinkhornConfig {
        epsilon_min: 1e-3,
        ..SinkhornConfig::default()
    };
    let started = Instant::now();

    let clock = Instant::now();
    let (mut worst, mut worst_dual) = (0.0f64, 0.0f64);
    for k in 0..25 {
        let mut rng = rng(opts.seed.wrapping_add(k));
        let (n, m) = (rng.random_range(2..=512), rng.random_range(2..=512));
        let a = line(&mut rng, n)?;
        let b = line(&mut rng, m)?;
        let exact = exact_ot_1d(&a, &b)?;
        let sol = sinkhorn(&a, &b, CostSpec::new(Metric::L1), &cfg)?;
        worst = worst.max(relative_error(sol.transport_cost, exact));
        worst_dual = worst_dual.max(relative_error(sol.value, exact));
    }
    out.checks.push(Check::at_most("oracle.quantile_1d.max_rel_err", worst, 1e-2, clock.elapsed()));
    out.diagnostic("oracle.quantile_1d.dual_value_max_rel_err", worst_dual);

    let clock = Instant::now();
    let (mut worst, mut worst_dual) = (0.0f64, 0.0f64);
    for k in 0..25 {
        let mut rng = rng(opts.seed.wrapping_add(1_000 + k));
        let (n, dim) = (rng.random_range(2..=6), rng.random_range(1..=4));
        let a = unit_cube(&mut rng, n, dim, -1.0, 1.0)?;
        let b = unit_cube(&mut rng, n, dim, -1.0, 1.0)?;
        let spec = CostSpec::default();
        let exact = exact_ot_small(&a, &b, spec)?;
        let sol = sinkhorn(&a, &b, spec, &cfg)?;
        worst = worst.max(relative_error(sol.transport_cost, exact));
        worst_dual = worst_dual.max(relative_error(sol.value, exact));
    }
    out.checks.push(Check::at_most("oracle.permutation.max_rel_err", worst, 1e-2, clock.elapsed()));
    out.diagnostic("oracle.permutation.dual_value_max_rel_err", worst_dual);
    out.runtime("oracle.runtime_s", started, 60.0);

    out.config("instances", json!({"quantile_1d": 25, "permutation": 25}));
    out.config("quantile_1d", json!({"n_max": 512, "metric": "l1", "weights": "random"}));
    out.config("permutation", json!({"n_max": 6, "dim_max": 4, "metric": "squared_l2"}));
    out.config("sinkhorn", serde_json::to_value(&cfg)?);
    out.config("compared", json!("transport_cost"));
    Ok(())
}

pub(super) fn gradient(opts: &VerifyOptions, out: &mut Outcome) -> Result<()> {
    let cfg = SinkhornConfig {
        epsilon: 0.05,
        epsilon_min: 0.01,
        marginal_tolerance: 1e-10,
        max_iterations: 1_000_000,
        ..SinkhornConfig::default()
    };
    let spec = CostSpec::default();
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for k in 0..20 {
        let mut rng = rng(opts.seed.wrapping_add(k));
        let (n, m, dim) = (rng.random_range(2..=64), rng.random_range(2..=64), rng.random_range(1..=8));
        let offset: f32 = rng.random_range(0.0..1.0);
        let a = unit_cube(&mut rng, n, dim, 0.0, 1.0)?;
        let b = unit_cube(&mut rng, m, dim, offset, offset + 1.0)?;
        let sol = sinkhorn(&a, &b, spec, &cfg)?;
        let grads = calibrate_gradients(&sol, &a)?;
        let delta = 1e-4 / n as f64;
        for i in 0..n {
            let fd = finite_difference_gradient(&a, &b, spec, &cfg, i, delta)?;
            let tol = (0.05 * grads.grad[i].abs()).max(1e-3 * sol.mean_cost);
            worst = worst.max((fd - grads.grad[i]).abs() / tol);
            checked += 1;
        }
    }
    out.checks.push(Check::at_most(
        "gradient.max_error_over_tolerance",
        worst,
        1.0,
        started.elapsed(),
    ));
    out.runtime("gradient.runtime_s", started, 120.0);
    out.diagnostic("gradient.points_checked", checked as f64);
    out.config("instances", json!(20));
    out.config("n_max", json!(64));
    out.config("tolerance", json!("max(0.05 * |grad|, 1e-3 * mean cost)"));
    out.config("finite_difference_delta", json!("1e-4 / n"));
    out.config("sinkhorn", serde_json::to_value(&cfg)?);
    Ok(())
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub(super) fn taylor(opts: &VerifyOptions, out: &mut Outcome) -> Result<()> {
    let cfg = SinkhornConfig {
        epsilon: 0.1,
        epsilon_min: 0.1,
        marginal_tolerance: 1e-11,
        ..SinkhornConfig::default()
    };
    let spec = CostSpec::default();
    let lambdas = [0.02, 0.04, 0.08, 0.16];
    let started = Instant::now();
    let mut rng = rng(opts.seed);
    let base = unit_cube(&mut rng, 30, 2, 0.0, 1.0)?;
    let target = unit_cube(&mut rng, 20, 2, 0.7, 1.7)?;
    let update = unit_cube(&mut rng, 10, 2, 0.7, 1.7)?;
    let mix = MixtureSpec::new(lambdas[0], base, update)?;
    let (_, direction) = mixture_direction(&mix, &target, spec, &cfg)?;
    let mut gaps = Vec::new();
    for &l in &lambdas {
        let gap = taylor_gap(&mix.with_lambda(l)?, &target, direction, spec, &cfg)?;
        out.diagnostic(&format!("taylor.gap.lambda_{l}"), gap);
        gaps.push(gap);
    }
    let xs: Vec<f64> = lambdas.iter().map(|l: &f64| l.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    out.checks.push(Check::at_least("taylor.loglog_slope", slope, 1.6, started.elapsed()));
    out.runtime("taylor.runtime_s", started, 60.0);
    out.diagnostic("taylor.direction", direction);
    out.config("lambdas", json!(lambdas));
    out.config("sizes", json!({"base": 30, "update": 10, "target": 20, "dim": 2}));
    out.config("sinkhorn", serde_json::to_value(&cfg)?);
    Ok(())
}

/// A random function on the line with Lipschitz constant at most 1.
enum TestFunction {
    /// Integral of a piecewise-constant slope in [-1, 1].
    Piecewise { knots: Vec<f64>, slopes: Vec<f64> },
    Kink { scale: f64, center: f64 },
    Wave { freq: f64, phase: f64 },
    Clamp { sign: f64, low: f64, high: f64 },
}

impl TestFunction {
    fn random(rng: &mut ChaCha8Rng, kind: usize) -> Self {
        match kind % 4 {
            0 => {
                let mut knots: Vec<f64> = (0..8).map(|_| rng.random_range(-6.0..6.0)).collect();
                knots.sort_by(f64::total_cmp);
                let slopes = (0..=knots.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                Self::Piecewise { knots, slopes }
            }
            1 => Self::Kink {
                scale: rng.random_range(-1.0..=1.0),
                center: rng.random_range(-4.0..4.0),
            },
            2 => Self::Wave {
                freq: rng.random_range(0.2..5.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            },
            _ => {
                let a: f64 = rng.random_range(-4.0..4.0);
                let b: f64 = rng.random_range(-4.0..4.0);
                Self::Clamp {
                    sign: if rng.random::<bool>() { 1.0 } else { -1.0 },
                    low: a.min(b),
                    high: a.max(b),
                }
            }
        }
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Piecewise { knots, slopes } => {
                // h(knots[0]) = 0; integrate the slope from there.
                let mut h = 0.0;
                let mut at = knots[0];
                if x <= at {
                    return slopes[0] * (x - at);
                }
                for (k, &next) in knots.iter().enumerate().skip(1) {
                    if x <= next {
                        return h + slopes[k] * (x - at);
                    }
                    h += slopes[k] * (next - at);
                    at = next;
                }
                h + slopes[knots.len()] * (x - at)
            }
            Self::Kink { scale, center } => scale * (x - center).abs(),
            Self::Wave { freq, phase } => (freq * x + phase).sin() / freq,
            Self::Clamp { sign, low, high } => sign * x.clamp(*low, *high),
        }
    }

    fn expectation(&self, d: &DiscreteDistribution) -> f64 {
        d.points()
            .iter()
            .zip(d.weights())
            .map(|(&x, w)| w * self.eval(x as f64))
            .sum()
    }
}

pub(super) fn lipschitz(opts: &VerifyOptions, out: &mut Outcome) -> Result<()> {
    let cfg = SinkhornConfig::default();
    let started = Instant::now();
    let (mut worst_exact, mut worst_sinkhorn) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut functions = 0;
    for k in 0..20 {
        let mut rng = rng(opts.seed.wrapping_add(k));
        let (n, m) = (rng.random_range(2..=200), rng.random_range(2..=200));
        let a = line(&mut rng, n)?;
        let b = line(&mut rng, m)?;
        let exact = exact_ot_1d(&a, &b)?;
        let entropic = sinkhorn(&a, &b, CostSpec::new(Metric::L1), &cfg)?.value;
        for j in 0..10 {
            let h = TestFunction::random(&mut rng, j);
            let gap = (h.expectation(&a) - h.expectation(&b)).abs();
            worst_exact = worst_exact.max(gap - exact);
            worst_sinkhorn = worst_sinkhorn.max(gap - entropic);
            functions += 1;
        }
    }
    let elapsed = started.elapsed();
    out.checks.push(Check::at_most("lipschitz.max_violation_exact_ot", worst_exact, 1e-9, elapsed));
    out.checks.push(Check::at_most("lipschitz.max_violation_sinkhorn", worst_sinkhorn, 1e-9, elapsed));
    out.runtime("lipschitz.runtime_s", started, 10.0);
    out.diagnostic("lipschitz.functions", functions as f64);
    out.config("instances", json!({"count": 20, "n_max": 200, "functions_each": 10, "metric": "l1"}));
    out.config("sinkhorn", serde_json::to_value(&cfg)?);
    Ok(())
}

/// GOT-D and knn dog counts on the two-cluster fixture.
pub(super) fn figure3(opts: &VerifyOptions, out: &mut Outcome) -> Result<()> {
    let cfg = SinkhornConfig {
        epsilon_min: 0.01,
        ..SinkhornConfig::default()
    };
    let budget = 100;
    let started = Instant::now();
    let fixture = Figure3::generate(opts.seed)?;
    let candidate = fixture.candidate.to_distribution()?;
    let target = fixture.target.to_distribution()?;

    let clock = Instant::now();
    let sol = sinkhorn(&candidate, &target, CostSpec::default(), &cfg)?;
    let grads = calibrate_gradients(&sol, &candidate)?;
    let gotd = select_got_d(&grads, budget, SelectionMode::Clean)?;
    let gotd_dogs = Figure3::dog_count(&gotd.selected_ids);
    out.checks.push(Check::at_least("figure3.gotd_dogs", gotd_dogs as f64, 95.0, clock.elapsed()));

    let clock = Instant::now();
    let knn = knn_select(&candidate, &target, budget)?;
    let knn_dogs = Figure3::dog_count(&knn.selected_ids);
    out.checks.push(Check::at_most(
        "figure3.knn_dogs_distance_from_50",
        (knn_dogs as f64 - 50.0).abs(),
        10.0,
        clock.elapsed(),
    ));
    out.runtime("figure3.runtime_s", started, 120.0);
    out.diagnostic("figure3.knn_dogs", knn_dogs as f64);
    out.diagnostic("figure3.gotd_iterations", sol.iterations_used as f64);
    out.config(
        "fixture",
        json!({"cats": 9900, "dogs": 100, "target_each": 500, "separation": 4.0, "dim": 2}),
    );
    out.config("budget", json!(budget));
    out.config("sinkhorn", serde_json::to_value(&cfg)?);
    Ok(())
}

/// Peak resident set size of this process, from /proc on Linux.
fn peak_rss_bytes() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024.0)
}

pub(super) fn perf(opts: &VerifyOptions, dir: &Path, out: &mut Outcome) -> Result<()> {
    let scale = opts.perf;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {} workers: {e}", opts.workers)))?;
    let clock = Instant::now();
    let (catalog, target) = perf_catalog(dir, opts.seed, scale)?;
    out.diagnostic("perf.fixture_s", clock.elapsed().as_secs_f64());

    let cfg = PipelineConfig {
        resample_total: scale.candidates,
        budget: (scale.candidates / 20).max(1),
        sinkhorn: SinkhornConfig {
            epsilon: 0.05,
            epsilon_min: 0.05,
            marginal_tolerance: 1e-3,
            ..SinkhornConfig::default()
        },
        seed: opts.seed,
        ..PipelineConfig::default()
    };
    let started = Instant::now();
    let run = pool.install(|| run_got_d_detailed(&catalog, &target, &cfg))?;
    let wall = started.elapsed();
    out.checks.push(Check::at_most("perf.wall_s", wall.as_secs_f64(), 600.0, wall));
    let peak_gb = peak_rss_bytes().map_or(f64::NAN, |b| b / 1e9);
    out.checks.push(Check::at_most("perf.peak_rss_gb", peak_gb, 16.0, Duration::ZERO));

    for (key, value) in run.selection.timings() {
        if let Ok(v) = value.parse::<f64>() {
            out.diagnostic(&format!("perf.{key}"), v);
        }
    }
    out.diagnostic("perf.iterations", run.solution.iterations_used as f64);
    out.diagnostic("perf.marginal_error", run.solution.final_marginal_error);
    out.diagnostic("perf.selected", run.selection.len() as f64);
    out.diagnostic("perf.resampled", run.resample.candidates.len() as f64);
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    out.diagnostic("perf.available_cores", cores as f64);
    out.config("scale", serde_json::to_value(scale)?);
    out.config("workers", json!(opts.workers));
    out.config("pipeline", serde_json::to_value(&cfg)?);
    Ok(())
}

/// Top-`k` ids by the importance-resampling score, computed from n-gram
/// string counts (no hashing). Equals the hashed model whenever the
/// vocabulary's n-grams fall in distinct bins, which is checked.
pub fn dsir_reference_top_k(
    target_texts: &[String],
    pool: &[(String, String)],
    k: usize,
    bins: usize,
    smoothing: f64,
) -> Result<Vec<String>> {
    fn grams(text: &str) -> Vec<String> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        out.extend(words.windows(2).map(|p| format!("{} {}", p[0], p[1])));
        out
    }
    fn counts<'a>(texts: impl Iterator<Item = &'a str>) -> (HashMap<String, f64>, f64) {
        let mut c = HashMap::new();
        let mut total = 0.0;
        for t in texts {
            for g in grams(t) {
                *c.entry(g).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        (c, total)
    }
    let (tc, tn) = counts(target_texts.iter().map(String::as_str));
    let (cc, cn) = counts(pool.iter().map(|(_, t)| t.as_str()));
    let mut seen_bins = HashMap::new();
    for g in tc.keys().chain(cc.keys()) {
        let bin = crate::baselines::fnv1a64(g.as_bytes()) % bins as u64;
        if let Some(other) = seen_bins.insert(bin, g.clone()) {
            if &other != g {
                return Err(Error::invalid(format!("n-grams {other:?} and {g:?} share a bin")));
            }
        }
    }
    let p = |c: &HashMap<String, f64>, n: f64, g: &str| {
        (c.get(g).copied().unwrap_or(0.0) + smoothing) / (n + smoothing * bins as f64)
    };
    let mut scored: Vec<(f64, &String)> = pool
        .iter()
        .map(|(id, text)| {
            let s = grams(text).iter().map(|g| (p(&tc, tn, g) / p(&cc, cn, g)).ln()).sum();
            (s, id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.clone()).collect())
}

/// Round-robin nearest-neighbour selection over fully sorted distance lists.
pub fn brute_force_knn(candidate: &DiscreteDistribution, target: &DiscreteDistribution, budget: usize) -> Vec<String> {
    let n = candidate.len();
    let dist = |i: usize, j: usize| -> f64 {
        candidate
            .point(i)
            .iter()
            .zip(target.point(j))
            .map(|(x, y)| {
                let d = *x as f64 - *y as f64;
                d * d
            })
            .sum()
    };
    let order = target_order(target);
    let mut sorted: Vec<Option<Vec<usize>>> = vec![None; target.len()];
    let mut cursor = vec![0usize; target.len()];
    let mut taken = vec![false; n];
    let mut out = Vec::new();
    let want = budget.min(n);
    while out.len() < want {
        for &j in &order {
            if out.len() == want {
                break;
            }
            let list = sorted[j].get_or_insert_with(|| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| dist(a, j).total_cmp(&dist(b, j)).then(a.cmp(&b)));
                idx
            });
            while taken[list[cursor[j]]] {
                cursor[j] += 1;
            }
            let i = list[cursor[j]];
            taken[i] = true;
            out.push(candidate.ids()[i].clone());
        }
    }
    out
}

/// Disjoint vocabularies whose unigrams and bigrams occupy distinct bins.
const DSIR_TARGET_VOCAB: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
const DSIR_OTHER_VOCAB: [&str; 5] = ["red", "orange", "blue", "black", "white"];

fn words(rng: &mut ChaCha8Rng, vocab: &[&str], len: usize) -> String {
    (0..len).map(|_| *vocab.choose(rng).expect("non-empty vocabulary")).collect::<Vec<_>>().join(" ")
}

pub(super) fn baselines(opts: &VerifyOptions, dir: &Path, out: &mut Outcome) -> Result<()> {
    let started = Instant::now();

    // Importance resampling on disjoint vocabularies.
    let clock = Instant::now();
    let mut rng = rng(opts.seed);
    let (target_vocab, other_vocab) = (DSIR_TARGET_VOCAB, DSIR_OTHER_VOCAB);
    let target_texts: Vec<String> = (0..20)
        .map(|_| {
            let len = rng.random_range(3..=8);
            words(&mut rng, &target_vocab, len)
        })
        .collect();
    let mut kinds: Vec<bool> = (0..40).map(|i| i < 10).collect();
    kinds.shuffle(&mut rng);
    let pool: Vec<(String, String)> = kinds
        .iter()
        .enumerate()
        .map(|(i, &on_target)| {
            let vocab: &[&str] = if on_target { &target_vocab } else { &other_vocab };
            let len = rng.random_range(2..=8);
            (format!("r{i:02}"), words(&mut rng, vocab, len))
        })
        .collect();
    let on_target: HashSet<&String> = pool.iter().zip(&kinds).filter(|(_, &k)| k).map(|(p, _)| &p.0).collect();
    let fit = |texts: Vec<&str>| NGramFeatureModel::fit(texts.into_iter().map(Ok), DEFAULT_BINS, DEFAULT_SMOOTHING);
    let target_model = fit(target_texts.iter().map(String::as_str).collect())?;
    let pool_model = fit(pool.iter().map(|(_, t)| t.as_str()).collect())?;
    let records = || {
        pool.iter().map(|(id, text)| {
            Ok(CorpusRecord {
                id: id.clone(),
                text: text.clone(),
                domain: String::new(),
            })
        })
    };
    let k = on_target.len();
    let selected = dsir_select(records(), &target_model, &pool_model, k, opts.seed, GumbelNoise::Off)?;
    let reference = dsir_reference_top_k(&target_texts, &pool, k, DEFAULT_BINS, DEFAULT_SMOOTHING)?;
    let mut mismatches = selected.selected_ids.iter().zip(&reference).filter(|(a, b)| a != b).count();
    mismatches += selected.selected_ids.iter().filter(|id| !on_target.contains(id)).count();
    out.checks.push(Check::at_most("baselines.dsir_top_k_mismatches", mismatches as f64, 0.0, clock.elapsed()));

    // Nearest neighbours against brute force.
    let clock = Instant::now();
    let mut shapes = vec![(1000, 1000, 4), (4000, 250, 8), (250, 4000, 2), (50, 20_000, 3)];
    let mut rng = self::rng(opts.seed.wrapping_add(1));
    for _ in 0..16 {
        shapes.push((rng.random_range(1..300), rng.random_range(1..300), rng.random_range(1..6)));
    }
    let mut knn_mismatched = 0;
    for (k, &(n, m, dim)) in shapes.iter().enumerate() {
        let mut rng = self::rng(opts.seed.wrapping_add(100 + k as u64));
        let c = unit_cube(&mut rng, n, dim, -1.0, 1.0)?;
        let t = unit_cube(&mut rng, m, dim, -1.0, 1.0)?;
        let budget = rng.random_range(1..=2 * n);
        if knn_select(&c, &t, budget)?.selected_ids != brute_force_knn(&c, &t, budget) {
            knn_mismatched += 1;
        }
    }
    out.checks.push(Check::at_most(
        "baselines.knn_mismatched_instances",
        knn_mismatched as f64,
        0.0,
        clock.elapsed(),
    ));

    // Every selector twice with the same seed.
    let clock = Instant::now();
    let mut rng = self::rng(opts.seed.wrapping_add(2));
    let mut entries = Vec::new();
    for (d, shift) in [("d0", 0.0f32), ("d1", 1.5), ("d2", 4.0)] {
        let n = 300;
        let matrix = EmbeddingMatrix::new(
            (0..n).map(|i| format!("{d}-{i}")).collect(),
            2,
            gaussian_rows(&mut rng, n, &[shift, 0.0]),
        )?;
        let path = dir.join(format!("{d}.emb"));
        write_embeddings(&matrix, &path)?;
        entries.push(DomainEntry {
            name: d.into(),
            record_count: n,
            embedding_path: path,
            corpus_path: None,
        });
    }
    let catalog = DomainCatalog::new(entries)?;
    let target = DiscreteDistribution::new(
        gaussian_rows(&mut rng, 80, &[1.0, 0.0]),
        2,
        None,
        (0..80).map(|i| format!("t{i}")).collect(),
    )?;
    let pooled = read_embeddings(&catalog.domains[0].embedding_path)?.into_distribution()?;
    let pipeline = PipelineConfig {
        relevance_sample_per_domain: 100,
        resample_total: 400,
        budget: 40,
        sinkhorn: SinkhornConfig {
            epsilon_min: 0.01,
            ..SinkhornConfig::default()
        },
        seed: opts.seed,
        ..PipelineConfig::default()
    };
    let seed = opts.seed;
    type Run<'a> = Box<dyn Fn() -> Result<(Vec<String>, Vec<f64>)> + 'a>;
    let runs: Vec<(&str, Run)> = vec![
        (
            "gotd",
            Box::new(|| {
                let r = run_got_d(&catalog, &target, &pipeline)?;
                Ok((r.selected_ids, r.scores))
            }),
        ),
        (
            "dsir",
            Box::new(|| {
                let r = dsir_select(records(), &target_model, &pool_model, 7, seed, GumbelNoise::On)?;
                Ok((r.selected_ids, r.scores))
            }),
        ),
        (
            "knn",
            Box::new(|| {
                let r = knn_select(&pooled, &target, 50)?;
                Ok((r.selected_ids, r.scores))
            }),
        ),
        (
            "random",
            Box::new(|| {
                let r = random_select(pooled.ids(), 50, seed)?;
                Ok((r.selected_ids, r.scores))
            }),
        ),
        (
            "all-domains",
            Box::new(|| {
                let r = all_domains_select(&catalog, 90, seed)?;
                Ok((r.selected_ids, r.scores))
            }),
        ),
    ];
    let mut unstable = Vec::new();
    for (name, run) in &runs {
        let first = run()?;
        let second = run()?;
        let same_bits = first.0 == second.0
            && first.1.len() == second.1.len()
            && first.1.iter().zip(&second.1).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_bits {
            unstable.push(*name);
        }
    }
    out.checks.push(Check::at_most(
        "baselines.nondeterministic_selectors",
        unstable.len() as f64,
        0.0,
        clock.elapsed(),
    ));
    out.runtime("baselines.runtime_s", started, 60.0);
    out.config("dsir", json!({"pool": 40, "on_target": k, "noise": "off", "bins": DEFAULT_BINS}));
    out.config("knn_shapes", json!(shapes));
    out.config("deterministic", json!(runs.iter().map(|r| r.0).collect::<Vec<_>>()));
    if !unstable.is_empty() {
        out.config("nondeterministic", json!(unstable));
    }
    Ok(())
}

/// Finite f32 bit patterns, including subnormals, zeros of both signs and
/// the extremes.
fn any_finite_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

pub(super) fn io(opts: &VerifyOptions, dir: &Path, out: &mut Outcome) -> Result<()> {
    let started = Instant::now();

    let clock = Instant::now();
    let mut rng = rng(opts.seed);
    let mut mismatches = 0;
    let shapes = [(0, 3), (1, 1), (17, 5), (1000, 32), (3, 1024)];
    for (k, &(n, dim)) in shapes.iter().enumerate() {
        let mut values: Vec<f32> = (0..n * dim).map(|_| any_finite_f32(&mut rng)).collect();
        let specials = [0.0, -0.0, f32::MIN_POSITIVE / 2.0, f32::MAX, f32::MIN, -f32::MIN_POSITIVE];
        for (v, s) in values.iter_mut().zip(specials) {
            *v = s;
        }
        let ids = (0..n).map(|i| format!("row-{i}-é日")).collect();
        let matrix = EmbeddingMatrix::new(ids, dim, values)?;
        let path = dir.join(format!("m{k}.emb"));
        write_embeddings(&matrix, &path)?;
        let back = read_embeddings(&path)?;
        let bits = |m: &EmbeddingMatrix| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if back.ids != matrix.ids || back.dim != matrix.dim || bits(&back) != bits(&matrix) {
            mismatches += 1;
        }
        if n > 0 {
            let rows: Vec<usize> = (0..n).step_by(3).collect();
            let part = EmbeddingFile::open(&path)?.read_rows(&rows)?;
            let want: Vec<u32> = rows.iter().flat_map(|&r| matrix.row(r).iter().map(|v| v.to_bits())).collect();
            if bits(&part) != want {
                mismatches += 1;
            }
        }
    }
    out.checks.push(Check::at_most(
        "io.embedding_round_trip_mismatches",
        mismatches as f64,
        0.0,
        clock.elapsed(),
    ));

    let clock = Instant::now();
    let alphabet = ['a', 'b', 'z', ' ', ' ', '\n', 'é', '日', '😀'];
    let records: Vec<CorpusRecord> = (0..10_000)
        .map(|i| {
            let len = if rng.random_bool(0.1) { 500 + rng.random_range(0..3) } else { rng.random_range(0..2600) };
            CorpusRecord {
                id: format!("f{i}"),
                text: (0..len).map(|_| *alphabet.choose(&mut rng).expect("non-empty")).collect(),
                domain: format!("d{}", rng.random_range(0..3)),
            }
        })
        .collect();
    let path = dir.join("fuzz.jsonl");
    write_corpus(&path, &records)?;
    let chars = |r: &CorpusRecord| r.text.chars().count();
    let long_enough = records.iter().filter(|r| chars(r) >= NLG_LENGTH).count();
    let mut violations = 0;

    let nlg: Vec<CorpusRecord> = preprocess(read_corpus(&path)?, PreprocessMode::Nlg500).collect::<Result<_>>()?;
    violations += nlg.iter().filter(|r| chars(r) != NLG_LENGTH).count();
    violations += nlg.len().abs_diff(long_enough);

    let nlu: Vec<CorpusRecord> = preprocess(read_corpus(&path)?, PreprocessMode::Nlu1000).collect::<Result<_>>()?;
    violations += nlu.iter().filter(|r| chars(r) > NLU_LENGTH).count();
    let total_in: usize = records.iter().map(chars).sum();
    let joins: usize = nlu.iter().map(|r| r.id.matches('+').count()).sum();
    let total_out: usize = nlu.iter().map(chars).sum();
    violations += usize::from(total_out != total_in + joins);
    let ids: HashSet<&String> = nlu.iter().map(|r| &r.id).collect();
    violations += nlu.len() - ids.len();
    out.checks.push(Check::at_most("io.preprocess_violations", violations as f64, 0.0, clock.elapsed()));
    out.runtime("io.runtime_s", started, 30.0);
    out.diagnostic("io.nlg500_outputs", nlg.len() as f64);
    out.diagnostic("io.nlu1000_outputs", nlu.len() as f64);
    out.config("embedding_shapes", json!(shapes));
    out.config("fuzz_records", json!(records.len()));
    Ok(())
}

//! End-to-end selection: rank domains by transport distance to the target,
//! resample candidates from the closest ones, solve once, rank by gradient.

mod catalog;
mod output;

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use catalog::{DomainCatalog, DomainEntry};
pub use output::{write_resample_csv, RunWriter};

use crate::baselines::{equal_split, fnv1a64, sample_indices};
use crate::data::{EmbeddingFile, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::gradient::{calibrate_gradients, select_got_d, SelectionMode, SelectionResult};
use crate::ot::{sinkhorn, CostSpec, DiscreteDistribution, OtSolution, SinkhornConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub relevance_sample_per_domain: usize,
    pub resample_top_domains: usize,
    pub resample_total: usize,
    pub budget: usize,
    pub cost: CostSpec,
    pub sinkhorn: SinkhornConfig,
    pub mode: SelectionMode,
    pub seed: u64,
    /// Drop candidates whose embedding bytes repeat an earlier candidate.
    pub dedup: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            relevance_sample_per_domain: 10_000,
            resample_top_domains: 2,
            resample_total: 2_000_000,
            budget: 1,
            cost: CostSpec::default(),
            sinkhorn: SinkhornConfig::default(),
            mode: SelectionMode::Clean,
            seed: 0,
            dedup: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resample_top_domains == 0 {
            return Err(Error::invalid("resample_top_domains must be at least 1"));
        }
        if self.relevance_sample_per_domain == 0 {
            return Err(Error::invalid("relevance_sample_per_domain must be at least 1"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if self.budget > self.resample_total {
            return Err(Error::invalid(format!(
                "budget {} exceeds resample_total {}",
                self.budget, self.resample_total
            )));
        }
        self.sinkhorn.validate()
    }
}

/// Seed for one stage and domain, derived from the run seed.
fn stage_seed(seed: u64, stage: &str, domain: &str) -> u64 {
    seed ^ fnv1a64(format!("{stage}/{domain}").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRelevance {
    pub name: String,
    pub ot_distance: f64,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub per_domain: Vec<DomainRelevance>,
    /// Domain names, closest first.
    pub ranking: Vec<String>,
}

/// Reads a seeded uniform sample of `count` rows (sorted by row index).
fn sample_domain(domain: &DomainEntry, count: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let mut file = EmbeddingFile::open(&domain.embedding_path)?;
    let mut rows = sample_indices(file.len(), count, seed);
    rows.sort_unstable();
    file.read_rows(&rows)
}

/// Transport distance from a uniform sample of every domain to the target.
/// Domains are solved concurrently; the report does not depend on the
/// worker count.
pub fn relevance_test(
    catalog: &DomainCatalog,
    target: &DiscreteDistribution,
    cfg: &PipelineConfig,
) -> Result<RelevanceReport> {
    catalog.validate()?;
    cfg.validate()?;
    let per_domain = catalog
        .domains
        .par_iter()
        .map(|d| {
            let seed = stage_seed(cfg.seed, "relevance", &d.name);
            let sample = sample_domain(d, cfg.relevance_sample_per_domain, seed)?;
            if sample.is_empty() {
                return Err(Error::invalid(format!("domain {:?} has no embeddings", d.name)));
            }
            if sample.dim != target.dim() {
                return Err(Error::DimensionMismatch {
                    expected: target.dim(),
                    found: sample.dim,
                });
            }
            let sample_size = sample.len();
            let sol = sinkhorn(&sample.into_distribution()?, target, cfg.cost, &cfg.sinkhorn)?;
            Ok(DomainRelevance {
                name: d.name.clone(),
                ot_distance: sol.value,
                sample_size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranked: Vec<&DomainRelevance> = per_domain.iter().collect();
    ranked.sort_by(|a, b| a.ot_distance.total_cmp(&b.ot_distance).then_with(|| a.name.cmp(&b.name)));
    let ranking = ranked.iter().map(|d| d.name.clone()).collect();
    Ok(RelevanceReport { per_domain, ranking })
}

/// The resampled candidate pool and where it came from.
#[derive(Debug, Clone)]
pub struct Resample {
    pub candidates: DiscreteDistribution,
    /// `(domain, rows drawn)`, closest domain first.
    pub per_domain: Vec<(String, usize)>,
    /// Rows requested but not available.
    pub shortfall: usize,
    /// Rows dropped as exact duplicates (only with `dedup`).
    pub duplicates: usize,
}

impl Resample {
    /// Domain of each candidate, aligned with `candidates`.
    pub fn domains(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.candidates.len());
        for (name, count) in &self.per_domain {
            out.extend(std::iter::repeat_n(name.as_str(), *count));
        }
        out
    }
}

/// Uniform draw without replacement of `resample_total` rows split equally
/// over the closest `resample_top_domains` domains (remainder to the
/// closest). A domain smaller than its share contributes all its rows.
pub fn resample_candidates(
    catalog: &DomainCatalog,
    report: &RelevanceReport,
    cfg: &PipelineConfig,
) -> Result<Resample> {
    cfg.validate()?;
    for d in &catalog.domains {
        if !report.ranking.contains(&d.name) {
            return Err(Error::invalid(format!("relevance report does not cover domain {:?}", d.name)));
        }
    }
    let top: Vec<&str> = report
        .ranking
        .iter()
        .take(cfg.resample_top_domains)
        .map(String::as_str)
        .collect();
    let shares = equal_split(cfg.resample_total, top.len());
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut dim = None;
    let mut per_domain = Vec::new();
    let mut shortfall = 0;
    let mut duplicates = 0;
    let mut seen = HashSet::new();
    for (name, share) in top.iter().zip(shares) {
        let domain = catalog
            .get(name)
            .ok_or_else(|| Error::invalid(format!("ranked domain {name:?} is not in the catalog")))?;
        let sample = sample_domain(domain, share, stage_seed(cfg.seed, "resample", name))?;
        if sample.len() < share {
            log::warn!("domain {name}: drew {} of {share} requested rows", sample.len());
            shortfall += share - sample.len();
        }
        if *dim.get_or_insert(sample.dim) != sample.dim {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap_or_default(),
                found: sample.dim,
            });
        }
        let mut kept = 0;
        for (i, id) in sample.ids.into_iter().enumerate() {
            let row = &sample.values[i * sample.dim..(i + 1) * sample.dim];
            if cfg.dedup {
                let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
                if !seen.insert(bytes) {
                    duplicates += 1;
                    continue;
                }
            }
            ids.push(id);
            points.extend_from_slice(row);
            kept += 1;
        }
        per_domain.push((name.to_string(), kept));
    }
    let dim = dim.unwrap_or(1);
    let candidates = DiscreteDistribution::new(points, dim, None, ids)?;
    Ok(Resample {
        candidates,
        per_domain,
        shortfall,
        duplicates,
    })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub relevance: RelevanceReport,
    pub resample: Resample,
    pub solution: OtSolution,
    pub selection: SelectionResult,
}

/// relevance test, resampling, one solve, calibration, selection.
pub fn run_got_d(
    catalog: &DomainCatalog,
    target: &DiscreteDistribution,
    cfg: &PipelineConfig,
) -> Result<SelectionResult> {
    run_got_d_detailed(catalog, target, cfg).map(|r| r.selection)
}

pub fn run_got_d_detailed(
    catalog: &DomainCatalog,
    target: &DiscreteDistribution,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    let clock = Instant::now();
    let relevance = relevance_test(catalog, target, cfg)?;
    let t_relevance = clock.elapsed();
    log::info!("relevance ranking: {}", relevance.ranking.join(", "));

    let clock = Instant::now();
    let resample = resample_candidates(catalog, &relevance, cfg)?;
    let t_resample = clock.elapsed();
    log::info!("resampled {} candidates", resample.candidates.len());

    let clock = Instant::now();
    let solution = sinkhorn(&resample.candidates, target, cfg.cost, &cfg.sinkhorn)?;
    let t_solve = clock.elapsed();

    let clock = Instant::now();
    let gradients = calibrate_gradients(&solution, &resample.candidates)?;
    let mut selection = select_got_d(&gradients, cfg.budget, cfg.mode)?;
    let t_select = clock.elapsed();

    selection
        .meta("seed", cfg.seed)
        .meta("relevance.ranking", relevance.ranking.join(","))
        .meta("resample.total", resample.candidates.len())
        .meta("resample.shortfall", resample.shortfall)
        .meta("resample.duplicates", resample.duplicates)
        .meta("targets", target.len())
        .meta("solver.value", solution.value)
        .meta("solver.iterations", solution.iterations_used)
        .meta("solver.marginal_error", solution.final_marginal_error)
        .meta("solver.epsilon_final", solution.epsilon_final)
        .meta("cost", format!("{:?}/{:?}", cfg.cost.metric, cfg.cost.normalization))
        .meta("time.relevance_ms", t_relevance.as_millis())
        .meta("time.resample_ms", t_resample.as_millis())
        .meta("time.solve_ms", t_solve.as_millis())
        .meta("time.select_ms", t_select.as_millis());
    for (name, count) in &resample.per_domain {
        selection.meta(format!("resample.domain.{name}"), count);
    }
    Ok(RunOutput {
        relevance,
        resample,
        solution,
        selection,
    })
}

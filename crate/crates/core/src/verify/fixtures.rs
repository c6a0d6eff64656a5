//! Seeded synthetic fixtures shared by the suites, the CLI tests and the bench.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{write_embeddings, EmbeddingMatrix};
use crate::error::Result;
use crate::ot::DiscreteDistribution;
use crate::pipeline::{DomainCatalog, DomainEntry};

pub const FIGURE3_CATS: usize = 9_900;
pub const FIGURE3_DOGS: usize = 100;
pub const FIGURE3_TARGET_EACH: usize = 500;
/// Distance between the two cluster means along the first axis.
pub const FIGURE3_SEPARATION: f32 = 4.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points from a unit-variance Gaussian centred at `mean`.
pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, mean: &[f32]) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal is valid");
    let mut out = Vec::with_capacity(n * mean.len());
    for _ in 0..n {
        out.extend(mean.iter().map(|m| m + normal.sample(rng)));
    }
    out
}

/// Random simplex weights bounded away from zero.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Two-cluster scenario: the candidate is 99% cats (mean at the origin) and
/// 1% dogs (mean shifted along the first axis); the target is half and half.
pub struct Figure3 {
    pub candidate: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
}

impl Figure3 {
    pub fn generate(seed: u64) -> Result<Self> {
        let mut rng = rng(seed);
        let cat = [0.0, 0.0];
        let dog = [FIGURE3_SEPARATION, 0.0];
        let mut cand = gaussian_rows(&mut rng, FIGURE3_CATS, &cat);
        cand.extend(gaussian_rows(&mut rng, FIGURE3_DOGS, &dog));
        let mut cand_ids = ids("cat-", FIGURE3_CATS);
        cand_ids.extend(ids("dog-", FIGURE3_DOGS));
        let mut target = gaussian_rows(&mut rng, FIGURE3_TARGET_EACH, &cat);
        target.extend(gaussian_rows(&mut rng, FIGURE3_TARGET_EACH, &dog));
        let mut target_ids = ids("target-cat-", FIGURE3_TARGET_EACH);
        target_ids.extend(ids("target-dog-", FIGURE3_TARGET_EACH));
        Ok(Self {
            candidate: EmbeddingMatrix::new(cand_ids, 2, cand)?,
            target: EmbeddingMatrix::new(target_ids, 2, target)?,
        })
    }

    pub fn is_dog(id: &str) -> bool {
        id.starts_with("dog-")
    }

    pub fn dog_count<S: AsRef<str>>(ids: &[S]) -> usize {
        ids.iter().filter(|id| Self::is_dog(id.as_ref())).count()
    }

    /// Writes `candidate.emb`, `target.emb` and a one-domain `catalog.json`.
    pub fn write(&self, dir: &Path) -> Result<DomainCatalog> {
        let cand = dir.join("candidate.emb");
        write_embeddings(&self.candidate, &cand)?;
        write_embeddings(&self.target, &dir.join("target.emb"))?;
        let catalog = DomainCatalog::new(vec![DomainEntry {
            name: "pets".into(),
            record_count: self.candidate.len(),
            embedding_path: cand,
            corpus_path: None,
        }])?;
        catalog.save(&dir.join("catalog.json"))?;
        Ok(catalog)
    }
}

/// Sizes of the scalability fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PerfScale {
    pub candidates: usize,
    pub targets: usize,
    pub dim: usize,
}

impl Default for PerfScale {
    fn default() -> Self {
        Self {
            candidates: 1_000_000,
            targets: 5_000,
            dim: 32,
        }
    }
}

/// Three-domain catalog for the scalability run: two domains near the target
/// with `candidates / 2` rows each and a distant one a fifth that size. The
/// run resamples all `candidates` rows from the two near domains.
pub fn perf_catalog(dir: &Path, seed: u64, scale: PerfScale) -> Result<(DomainCatalog, DiscreteDistribution)> {
    let mut rng = rng(seed);
    let d = scale.dim;
    let offset = |v: f32| {
        let mut m = vec![0.0f32; d];
        m[0] = v;
        m
    };
    let half = scale.candidates / 2;
    let domains = [
        ("near-a", scale.candidates - half, offset(0.5)),
        ("near-b", half, offset(-0.5)),
        ("far", (scale.candidates / 10).max(1), offset(6.0)),
    ];
    let mut entries = Vec::new();
    for (name, n, mean) in domains {
        let values = gaussian_rows(&mut rng, n, &mean);
        let matrix = EmbeddingMatrix::new(ids(&format!("{name}-"), n), d, values)?;
        let path = dir.join(format!("{name}.emb"));
        write_embeddings(&matrix, &path)?;
        entries.push(DomainEntry {
            name: name.into(),
            record_count: n,
            embedding_path: path,
            corpus_path: None,
        });
    }
    let target = gaussian_rows(&mut rng, scale.targets, &offset(0.0));
    let target = DiscreteDistribution::new(target, d, None, ids("target-", scale.targets))?;
    Ok((DomainCatalog::new(entries)?, target))
}

//! Random and per-domain uniform selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::EmbeddingFile;
use crate::error::{Error, Result};
use crate::gradient::{SelectionMethod, SelectionResult};
use crate::pipeline::DomainCatalog;

/// Positions of a seeded uniform draw without replacement, in draw order.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec()
}

/// `budget` ids uniformly without replacement; all ids when `budget >= n`.
pub fn random_select(candidate_ids: &[String], budget: usize, seed: u64) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::invalid("selection budget must be at least 1"));
    }
    let mut result = SelectionResult::new(SelectionMethod::Random, budget);
    for i in sample_indices(candidate_ids.len(), budget, seed) {
        result.push(candidate_ids[i].clone(), 0.0);
    }
    result.meta("candidates", candidate_ids.len()).meta("seed", seed);
    Ok(result)
}

/// Equal shares of `total` over `parts`, remainder to the first parts.
pub fn equal_split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|k| total / parts + usize::from(k < total % parts))
        .collect()
}

/// Splits the budget equally over domains in name order and draws uniformly
/// within each. Domain `k` (in name order) uses seed `seed + k`, so a
/// single-domain catalog reproduces [`random_select`]. A domain smaller than
/// its share contributes everything it has and the shortfall is logged.
pub fn all_domains_select(catalog: &DomainCatalog, budget: usize, seed: u64) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::invalid("selection budget must be at least 1"));
    }
    catalog.validate()?;
    let domains = catalog.by_name();
    let shares = equal_split(budget, domains.len());
    let mut result = SelectionResult::new(SelectionMethod::AllDomains, budget);
    let mut shortfall = 0;
    for (k, (domain, &share)) in domains.iter().zip(&shares).enumerate() {
        let file = EmbeddingFile::open(&domain.embedding_path)?;
        let ids = file.ids();
        if ids.len() < share {
            log::warn!(
                "domain {} has {} records, short of its share {share}",
                domain.name,
                ids.len()
            );
            shortfall += share - ids.len();
        }
        for i in sample_indices(ids.len(), share, seed.wrapping_add(k as u64)) {
            result.push(ids[i].clone(), 0.0);
        }
        result.meta(format!("domain.{}", domain.name), share.min(ids.len()));
    }
    result.meta("seed", seed).meta("shortfall", shortfall);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_embeddings, EmbeddingMatrix};
    use crate::pipeline::DomainEntry;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn random_cases() {
        let all = random_select(&ids(5), 5, 1).unwrap();
        let mut got = all.selected_ids.clone();
        got.sort();
        assert_eq!(got, ids(5));
        assert_eq!(random_select(&ids(5), 50, 1).unwrap().len(), 5);
        let a = random_select(&ids(10_000), 100, 7).unwrap();
        assert_eq!(a, random_select(&ids(10_000), 100, 7).unwrap());
        assert_ne!(a.selected_ids, random_select(&ids(10_000), 100, 8).unwrap().selected_ids);
        assert!(random_select(&ids(3), 0, 1).is_err());
    }

    #[test]
    fn split_rule() {
        assert_eq!(equal_split(100, 4), [25, 25, 25, 25]);
        assert_eq!(equal_split(100, 3), [34, 33, 33]);
        assert_eq!(equal_split(2, 3), [1, 1, 0]);
    }

    fn catalog(dir: &std::path::Path, sizes: &[(&str, usize)]) -> DomainCatalog {
        let mut domains = Vec::new();
        for &(name, n) in sizes {
            let path = dir.join(format!("{name}.emb"));
            let m = EmbeddingMatrix::new((0..n).map(|i| format!("{name}-{i}")).collect(), 1, vec![0.0; n]).unwrap();
            write_embeddings(&m, &path).unwrap();
            domains.push(DomainEntry {
                name: name.into(),
                record_count: n,
                embedding_path: path,
                corpus_path: None,
            });
        }
        DomainCatalog::new(domains).unwrap()
    }

    #[test]
    fn per_domain_shares() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog(dir.path(), &[("c", 50), ("a", 50), ("b", 50)]);
        let r = all_domains_select(&cat, 100, 3).unwrap();
        let count = |p: &str| r.selected_ids.iter().filter(|id| id.starts_with(p)).count();
        assert_eq!((count("a-"), count("b-"), count("c-")), (34, 33, 33));
        assert_eq!(r, all_domains_select(&cat, 100, 3).unwrap());
    }

    #[test]
    fn single_domain_matches_random() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog(dir.path(), &[("only", 40)]);
        let r = all_domains_select(&cat, 10, 11).unwrap();
        let ids: Vec<String> = (0..40).map(|i| format!("only-{i}")).collect();
        assert_eq!(r.selected_ids, random_select(&ids, 10, 11).unwrap().selected_ids);
    }

    #[test]
    fn shortfall_takes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog(dir.path(), &[("a", 3), ("b", 80)]);
        let r = all_domains_select(&cat, 20, 0).unwrap();
        assert_eq!(r.len(), 13);
        assert_eq!(r.metadata["shortfall"], "7");
    }
}

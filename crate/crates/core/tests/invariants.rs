//! Cross-module invariants checked through the public API on random inputs.

use std::collections::HashSet;
use std::path::Path;

use proptest::prelude::*;

use otsel::baselines::{dsir_scores, log_importance, GumbelNoise, NGramFeatureModel};
use otsel::data::{write_embeddings, CorpusRecord, EmbeddingMatrix};
use otsel::pipeline::{relevance_test, run_got_d_detailed, DomainCatalog, DomainEntry, PipelineConfig};
use otsel::verify::fixtures::{gaussian_rows, rng};
use otsel::{DiscreteDistribution, SelectionMode, SinkhornConfig};

fn write_catalog(dir: &Path, shifts: &[(usize, f32)], dim: usize, seed: u64) -> DomainCatalog {
    let mut r = rng(seed);
    let entries = shifts
        .iter()
        .enumerate()
        .map(|(k, &(n, shift))| {
            let mut mean = vec![0.0; dim];
            mean[0] = shift;
            let name = format!("d{k}");
            let ids = (0..n).map(|i| format!("{name}-{i}")).collect();
            let m = EmbeddingMatrix::new(ids, dim, gaussian_rows(&mut r, n, &mean)).unwrap();
            let path = dir.join(format!("{name}.emb"));
            write_embeddings(&m, &path).unwrap();
            DomainEntry {
                name,
                record_count: n,
                embedding_path: path,
                corpus_path: None,
            }
        })
        .collect();
    DomainCatalog::new(entries).unwrap()
}

fn target(n: usize, dim: usize, seed: u64) -> DiscreteDistribution {
    let ids = (0..n).map(|i| format!("t{i}")).collect();
    DiscreteDistribution::new(gaussian_rows(&mut rng(seed), n, &vec![0.0; dim]), dim, None, ids).unwrap()
}

fn fast_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        relevance_sample_per_domain: 60,
        resample_total: 120,
        budget: 20,
        seed,
        sinkhorn: SinkhornConfig {
            epsilon_min: 0.05,
            ..SinkhornConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn domains() -> impl Strategy<Value = Vec<(usize, f32)>> {
    prop::collection::vec((5usize..80, -4.0f32..4.0), 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relevance_ranking_is_a_permutation(shifts in domains(), dim in 1usize..4, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let catalog = write_catalog(dir.path(), &shifts, dim, seed);
        let report = relevance_test(&catalog, &target(30, dim, seed ^ 1), &fast_config(seed)).unwrap();
        let mut ranked = report.ranking.clone();
        ranked.sort();
        let mut names: Vec<String> = catalog.domains.iter().map(|d| d.name.clone()).collect();
        names.sort();
        prop_assert_eq!(ranked, names);
        for d in &report.per_domain {
            prop_assert!(d.ot_distance >= 0.0, "{} {}", d.name, d.ot_distance);
            prop_assert_eq!(d.sample_size, catalog.get(&d.name).unwrap().record_count.min(60));
        }
        let by_rank: Vec<f64> = report
            .ranking
            .iter()
            .map(|n| report.per_domain.iter().find(|d| &d.name == n).unwrap().ot_distance)
            .collect();
        prop_assert!(by_rank.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pipeline_selects_unique_resampled_ids(
        shifts in domains(),
        budget in 1usize..50,
        contrast in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let catalog = write_catalog(dir.path(), &shifts, 2, seed);
        let mut cfg = fast_config(seed);
        cfg.budget = budget.min(cfg.resample_total);
        cfg.mode = if contrast { SelectionMode::Contrast } else { SelectionMode::Clean };
        let run = run_got_d_detailed(&catalog, &target(25, 2, seed ^ 2), &cfg).unwrap();
        let pool: HashSet<&str> = run.resample.candidates.ids().iter().map(String::as_str).collect();
        let chosen: HashSet<&str> = run.selection.selected_ids.iter().map(String::as_str).collect();
        prop_assert_eq!(chosen.len(), run.selection.len());
        prop_assert!(chosen.is_subset(&pool));
        prop_assert_eq!(run.selection.len(), cfg.budget.min(pool.len()));
        let top: HashSet<&str> = run.resample.domains().into_iter().collect();
        prop_assert!(top.len() <= cfg.resample_top_domains);
        prop_assert!(top.iter().all(|d| run.relevance.ranking[..top.len()].iter().any(|r| r == d)));
    }

    #[test]
    fn ngram_counts_are_consistent(texts in prop::collection::vec("[a-d ]{0,40}", 0..30), bins in 1usize..64) {
        let fitted = NGramFeatureModel::fit(texts.iter().map(Ok::<_, otsel::Error>), bins, 0.5);
        if texts.is_empty() {
            prop_assert!(fitted.is_err());
            return Ok(());
        }
        let model = fitted.unwrap();
        prop_assert_eq!(model.counts.len(), bins);
        prop_assert!(model.counts.iter().all(|&c| c >= 0.0));
        prop_assert_eq!(model.total, model.counts.iter().sum::<f64>());
        let p: f64 = (0..bins).map(|b| model.probability(b)).sum();
        prop_assert!((p - 1.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn dsir_scores_recompose(texts in prop::collection::vec("[a-f ]{1,30}", 1..20), seed in any::<u64>(), noisy in any::<bool>()) {
        let target = NGramFeatureModel::fit(["a b c", "a b", "c d"].map(Ok::<_, otsel::Error>), 32, 0.1).unwrap();
        let candidate = NGramFeatureModel::fit(texts.iter().map(Ok::<_, otsel::Error>), 32, 0.1).unwrap();
        let records: Vec<_> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Ok(CorpusRecord { id: format!("r{i}"), text: t.clone(), domain: String::new() }))
            .collect();
        let noise = if noisy { GumbelNoise::On } else { GumbelNoise::Off };
        let scores = dsir_scores(records, &target, &candidate, seed, noise).unwrap();
        prop_assert_eq!(scores.len(), texts.len());
        for (s, t) in scores.iter().zip(&texts) {
            prop_assert_eq!(s.score, s.log_importance + s.gumbel_noise);
            prop_assert_eq!(s.log_importance, log_importance(t, &target, &candidate));
            if !noisy {
                prop_assert_eq!(s.gumbel_noise, 0.0);
            }
        }
    }
}

#[test]
fn pipeline_config_rejects_budget_above_resample_total() {
    let cfg = PipelineConfig {
        budget: 11,
        resample_total: 10,
        ..PipelineConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = PipelineConfig {
        resample_top_domains: 0,
        ..PipelineConfig::default()
    };
    assert!(cfg.validate().is_err());
}

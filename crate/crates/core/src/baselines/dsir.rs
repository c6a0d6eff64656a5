//! Importance resampling in hashed n-gram space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ngram::{feature_bins, NGramFeatureModel};
use crate::data::CorpusRecord;
use crate::error::{Error, Result};
use crate::gradient::{SelectionMethod, SelectionResult};

const SHARD_TEXTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GumbelNoise {
    #[default]
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsirScore {
    pub id: String,
    pub log_importance: f64,
    pub gumbel_noise: f64,
    pub score: f64,
}

/// Sum of `log p_target - log p_candidate` over the text's features.
pub fn log_importance(text: &str, target: &NGramFeatureModel, candidate: &NGramFeatureModel) -> f64 {
    feature_bins(text, target.bins)
        .into_iter()
        .map(|b| target.log_probability(b) - candidate.log_probability(b))
        .sum()
}

/// Scores every record in stream order. Noise draws come from one seeded
/// stream in record order, so scores do not depend on the worker count.
pub fn dsir_scores<I>(
    records: I,
    target: &NGramFeatureModel,
    candidate: &NGramFeatureModel,
    seed: u64,
    noise: GumbelNoise,
) -> Result<Vec<DsirScore>>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
{
    if target.bins != candidate.bins {
        return Err(Error::invalid(format!(
            "feature models disagree on bins: {} vs {}",
            target.bins, candidate.bins
        )));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut shard: Vec<CorpusRecord> = Vec::with_capacity(SHARD_TEXTS);
    let mut records = records.into_iter();
    loop {
        shard.clear();
        for r in records.by_ref().take(SHARD_TEXTS) {
            shard.push(r?);
        }
        if shard.is_empty() {
            break;
        }
        let weights: Vec<f64> = shard
            .par_iter()
            .map(|r| log_importance(&r.text, target, candidate))
            .collect();
        for (r, w) in shard.drain(..).zip(weights) {
            let g = match noise {
                GumbelNoise::On => gumbel.sample(&mut rng),
                GumbelNoise::Off => 0.0,
            };
            out.push(DsirScore {
                id: r.id,
                log_importance: w,
                gumbel_noise: g,
                score: w + g,
            });
        }
    }
    Ok(out)
}

/// Highest `budget` scores; ties by ascending id.
pub fn dsir_select<I>(
    records: I,
    target: &NGramFeatureModel,
    candidate: &NGramFeatureModel,
    budget: usize,
    seed: u64,
    noise: GumbelNoise,
) -> Result<SelectionResult>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
{
    if budget == 0 {
        return Err(Error::invalid("selection budget must be at least 1"));
    }
    let mut scores = dsir_scores(records, target, candidate, seed, noise)?;
    if scores.is_empty() {
        return Err(Error::invalid("no candidate texts to score"));
    }
    let n = scores.len();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    let mut result = SelectionResult::new(SelectionMethod::Dsir, budget);
    for s in scores.into_iter().take(budget) {
        result.push(s.id, s.score);
    }
    result
        .meta("candidates", n)
        .meta("bins", target.bins)
        .meta("noise", if noise == GumbelNoise::On { "on" } else { "off" })
        .meta("seed", seed)
        .meta("quality_filter", "omitted");
    Ok(result)
}

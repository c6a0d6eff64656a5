//! Comparison selectors sharing the [`SelectionResult`](crate::SelectionResult)
//! interface: importance resampling on hashed n-grams, nearest neighbours in
//! embedding space, uniform random, and per-domain uniform.

mod dsir;
mod knn;
mod ngram;
mod uniform;

pub use dsir::{dsir_scores, dsir_select, log_importance, DsirScore, GumbelNoise};
pub use knn::{knn_select, target_order};
pub use ngram::{
    feature_bins, fnv1a64, tokenize, NGramFeatureModel, DEFAULT_BINS, DEFAULT_SMOOTHING,
    NGRAM_MAGIC, NGRAM_VERSION,
};
pub use uniform::{all_domains_select, equal_split, random_select, sample_indices};

//! Hashed unigram and bigram features for importance resampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10_000;
pub const DEFAULT_SMOOTHING: f64 = 1e-2;
pub const NGRAM_MAGIC: &[u8; 4] = b"NGFM";
pub const NGRAM_VERSION: u32 = 1;

/// Texts hashed per parallel shard while fitting.
const SHARD_TEXTS: usize = 4096;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased whitespace tokens with leading and trailing punctuation
/// removed; tokens that are all punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Bin index of every unigram and bigram of `text`, with repetition.
pub fn feature_bins(text: &str, bins: usize) -> Vec<usize> {
    let tokens = tokenize(text);
    let bin = |s: &str| (fnv1a64(s.as_bytes()) % bins as u64) as usize;
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        out.push(bin(t));
    }
    for pair in tokens.windows(2) {
        out.push(bin(&format!("{} {}", pair[0], pair[1])));
    }
    out
}

/// Smoothed bag-of-hashed-n-grams distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramFeatureModel {
    pub bins: usize,
    pub counts: Vec<f64>,
    pub smoothing: f64,
    pub total: f64,
}

impl NGramFeatureModel {
    /// Counts features over `texts`. Shards are hashed in parallel; counts
    /// are integers, so the merge is exact in any order.
    pub fn fit<I, S>(texts: I, bins: usize, smoothing: f64) -> Result<Self>
    where
        I: IntoIterator<Item = Result<S>>,
        S: AsRef<str> + Send + Sync,
    {
        if bins == 0 {
            return Err(Error::invalid("feature model needs at least one bin"));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::invalid(format!("smoothing must be positive, got {smoothing}")));
        }
        let mut counts = vec![0.0; bins];
        let mut seen = 0usize;
        let mut shard: Vec<S> = Vec::with_capacity(SHARD_TEXTS);
        let mut texts = texts.into_iter();
        loop {
            shard.clear();
            for t in texts.by_ref().take(SHARD_TEXTS) {
                shard.push(t?);
            }
            if shard.is_empty() {
                break;
            }
            seen += shard.len();
            let partial = shard
                .par_iter()
                .fold(
                    || vec![0.0f64; bins],
                    |mut acc, text| {
                        for b in feature_bins(text.as_ref(), bins) {
                            acc[b] += 1.0;
                        }
                        acc
                    },
                )
                .reduce(
                    || vec![0.0f64; bins],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        a
                    },
                );
            counts.iter_mut().zip(&partial).for_each(|(x, y)| *x += y);
        }
        if seen == 0 {
            return Err(Error::invalid("cannot fit a feature model on an empty corpus"));
        }
        let total = counts.iter().sum();
        Ok(Self {
            bins,
            counts,
            smoothing,
            total,
        })
    }

    /// `(count + a) / (total + a * bins)`.
    pub fn probability(&self, bin: usize) -> f64 {
        (self.counts[bin] + self.smoothing) / (self.total + self.smoothing * self.bins as f64)
    }

    pub fn log_probability(&self, bin: usize) -> f64 {
        self.probability(bin).ln()
    }

    /// Little-endian `NGFM` file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let bins = u32::try_from(self.bins).map_err(|_| Error::invalid("bin count exceeds u32"))?;
        w.write_all(NGRAM_MAGIC).map_err(io)?;
        w.write_all(&NGRAM_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&bins.to_le_bytes()).map_err(io)?;
        w.write_all(&self.smoothing.to_le_bytes()).map_err(io)?;
        w.write_all(&self.total.to_le_bytes()).map_err(io)?;
        for c in &self.counts {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .map(BufReader::new)
            .and_then(|mut r| r.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 28 {
            return Err(format("truncated header".into()));
        }
        if &bytes[..4] != NGRAM_MAGIC {
            return Err(format("bad magic, expected \"NGFM\"".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != NGRAM_VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        let bins = u32_at(8) as usize;
        let expected = 28 + bins * 8;
        if bins == 0 || bytes.len() != expected {
            return Err(format(format!(
                "file is {} bytes, expected {expected} for {bins} bins",
                bytes.len()
            )));
        }
        let smoothing = f64_at(12);
        let total = f64_at(20);
        let counts: Vec<f64> = (0..bins).map(|k| f64_at(28 + 8 * k)).collect();
        if smoothing.is_nan() || smoothing <= 0.0 || counts.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(format("negative count or non-positive smoothing".into()));
        }
        Ok(Self {
            bins,
            counts,
            smoothing,
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(texts: &[&str], bins: usize) -> NGramFeatureModel {
        NGramFeatureModel::fit(texts.iter().map(|t| Ok(*t)), bins, DEFAULT_SMOOTHING).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("  Hello, World!  \"quoted\" --- it's"), ["hello", "world", "quoted", "it's"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn one_text_counts() {
        let bins = DEFAULT_BINS;
        let m = fit(&["a b"], bins);
        let bin = |s: &str| (fnv1a64(s.as_bytes()) % bins as u64) as usize;
        let mut expected = vec![0.0; bins];
        for s in ["a", "b", "a b"] {
            expected[bin(s)] += 1.0;
        }
        assert_eq!(m.counts, expected);
        assert_eq!(m.total, 3.0);
    }

    #[test]
    fn smoothing_floor() {
        let m = fit(&["a b"], 50);
        let unseen = (0..50).find(|&b| m.counts[b] == 0.0).unwrap();
        let expected = 1e-2 / (3.0 + 1e-2 * 50.0);
        assert!((m.probability(unseen) - expected).abs() < 1e-15);
        let sum: f64 = (0..50).map(|b| m.probability(b)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_bad_parameters() {
        let none: Vec<Result<&str>> = vec![];
        assert!(NGramFeatureModel::fit(none, 10, 1e-2).is_err());
        assert!(NGramFeatureModel::fit(vec![Ok("a")], 0, 1e-2).is_err());
        assert!(NGramFeatureModel::fit(vec![Ok("a")], 10, 0.0).is_err());
    }

    #[test]
    fn sharded_fit_matches_serial() {
        let texts: Vec<String> = (0..10_000).map(|i| format!("w{} w{} w{}", i % 17, i % 5, i)).collect();
        let m = NGramFeatureModel::fit(texts.iter().map(Ok::<_, Error>), 97, 0.5).unwrap();
        let mut serial = vec![0.0; 97];
        for t in &texts {
            for b in feature_bins(t, 97) {
                serial[b] += 1.0;
            }
        }
        assert_eq!(m.counts, serial);
        assert_eq!(m.total, 50_000.0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ngfm");
        let m = fit(&["the cat sat", "on the mat"], 64);
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 28 + 64 * 8);
        assert_eq!(&bytes[..4], b"NGFM");
        assert_eq!(NGramFeatureModel::load(&path).unwrap(), m);
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(NGramFeatureModel::load(&path).is_err());
    }
}

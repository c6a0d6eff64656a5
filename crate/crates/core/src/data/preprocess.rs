use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::corpus::CorpusRecord;
use crate::error::{Error, Result};

/// Fixed sample length for generation-style corpora.
pub const NLG_LENGTH: usize = 500;
/// Maximum sample length for understanding-style corpora.
pub const NLU_LENGTH: usize = 1000;

/// Separator inserted between concatenated short records.
const JOINER: char = '\n';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    /// Drop texts shorter than 500 characters, truncate the rest to 500.
    Nlg500,
    /// Split texts into 1000-character chunks; pack consecutive short texts
    /// of the same domain together.
    Nlu1000,
    #[default]
    Passthrough,
}

impl PreprocessMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PreprocessMode::Nlg500 => "nlg500",
            PreprocessMode::Nlu1000 => "nlu1000",
            PreprocessMode::Passthrough => "none",
        }
    }
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlg500" => Ok(PreprocessMode::Nlg500),
            "nlu1000" => Ok(PreprocessMode::Nlu1000),
            "none" | "passthrough" => Ok(PreprocessMode::Passthrough),
            _ => Err(Error::invalid(format!("unknown preprocess mode {s:?}"))),
        }
    }
}

/// Applies `mode` lazily to a record stream. Lengths are counted in Unicode
/// scalar values.
pub fn preprocess<I>(records: I, mode: PreprocessMode) -> Preprocessor<I::IntoIter>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
{
    Preprocessor {
        input: records.into_iter(),
        mode,
        pending: std::collections::VecDeque::new(),
        packed: None,
        done: false,
    }
}

/// Short texts being packed into one NLU sample.
struct Pack {
    ids: Vec<String>,
    text: String,
    chars: usize,
    domain: String,
}

impl Pack {
    fn into_record(self) -> CorpusRecord {
        CorpusRecord {
            id: self.ids.join("+"),
            text: self.text,
            domain: self.domain,
        }
    }
}

pub struct Preprocessor<I> {
    input: I,
    mode: PreprocessMode,
    pending: std::collections::VecDeque<CorpusRecord>,
    packed: Option<Pack>,
    done: bool,
}

impl<I: Iterator<Item = Result<CorpusRecord>>> Preprocessor<I> {
    fn nlu_push(&mut self, record: CorpusRecord) {
        let chars = record.text.chars().count();
        if chars > NLU_LENGTH {
            self.flush_pack();
            let chunks = chunk_chars(&record.text, NLU_LENGTH);
            for (k, text) in chunks.into_iter().enumerate() {
                self.pending.push_back(CorpusRecord {
                    id: format!("{}#{k}", record.id),
                    text,
                    domain: record.domain.clone(),
                });
            }
            return;
        }
        if let Some(pack) = &mut self.packed {
            if pack.domain == record.domain && pack.chars + 1 + chars <= NLU_LENGTH {
                pack.text.push(JOINER);
                pack.text.push_str(&record.text);
                pack.chars += 1 + chars;
                pack.ids.push(record.id);
                return;
            }
            self.flush_pack();
        }
        self.packed = Some(Pack {
            ids: vec![record.id],
            text: record.text,
            chars,
            domain: record.domain,
        });
    }

    fn flush_pack(&mut self) {
        if let Some(pack) = self.packed.take() {
            self.pending.push_back(pack.into_record());
        }
    }
}

impl<I: Iterator<Item = Result<CorpusRecord>>> Iterator for Preprocessor<I> {
    type Item = Result<CorpusRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.pending.pop_front() {
                return Some(Ok(r));
            }
            if self.done {
                return None;
            }
            let record = match self.input.next() {
                Some(Ok(r)) => r,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    self.flush_pack();
                    continue;
                }
            };
            match self.mode {
                PreprocessMode::Passthrough => return Some(Ok(record)),
                PreprocessMode::Nlg500 => {
                    if let Some(text) = truncate_chars(&record.text, NLG_LENGTH) {
                        return Some(Ok(CorpusRecord { text, ..record }));
                    }
                }
                PreprocessMode::Nlu1000 => self.nlu_push(record),
            }
        }
    }
}

/// The first `len` characters, or `None` if the text is shorter.
fn truncate_chars(text: &str, len: usize) -> Option<String> {
    match text.char_indices().nth(len) {
        Some((end, _)) => Some(text[..end].to_string()),
        None if text.chars().count() == len => Some(text.to_string()),
        None => None,
    }
}

fn chunk_chars(text: &str, len: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars.chunks(len).map(|c| c.iter().collect()).collect()
}

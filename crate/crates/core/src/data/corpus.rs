use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a JSON Lines corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub domain: String,
}

/// Streaming reader over a JSON Lines corpus.
///
/// Records are parsed one line at a time. Blank lines are skipped. Ids are
/// remembered to reject duplicates, so memory grows with the number of ids
/// but not with the text.
pub struct CorpusReader<R> {
    input: R,
    path: PathBuf,
    line: usize,
    buf: Vec<u8>,
    seen: HashSet<String>,
    failed: bool,
}

/// Opens `path` as a record stream.
pub fn read_corpus(path: &Path) -> Result<CorpusReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(file), path))
}

impl<R: BufRead> CorpusReader<R> {
    /// `path` is only used to label errors.
    pub fn new(input: R, path: impl Into<PathBuf>) -> Self {
        Self {
            input,
            path: path.into(),
            line: 0,
            buf: Vec::new(),
            seen: HashSet::new(),
            failed: false,
        }
    }

    fn parse_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_record(&mut self) -> Option<Result<CorpusRecord>> {
        loop {
            self.buf.clear();
            match self.input.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            self.line += 1;
            let text = match std::str::from_utf8(&self.buf) {
                Ok(t) => t.trim(),
                Err(e) => return Some(Err(self.parse_error(format!("invalid UTF-8: {e}")))),
            };
            if text.is_empty() {
                continue;
            }
            let record: CorpusRecord = match serde_json::from_str(text) {
                Ok(r) => r,
                Err(e) => return Some(Err(self.parse_error(format!("malformed record: {e}")))),
            };
            if record.id.is_empty() {
                return Some(Err(self.parse_error("empty id")));
            }
            if !self.seen.insert(record.id.clone()) {
                return Some(Err(self.parse_error(format!("duplicate id {:?}", record.id))));
            }
            return Some(Ok(record));
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<CorpusRecord>;

    /// Yields records in file order; after the first error the stream ends.
    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_record();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Writes records as JSON Lines.
pub fn write_corpus<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a CorpusRecord>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &[u8]) -> Vec<Result<CorpusRecord>> {
        CorpusReader::new(text, "mem.jsonl").collect()
    }

    #[test]
    fn reads_in_order() {
        let input = br#"{"id":"a","text":"one","domain":"x"}
{"id":"b","text":"two","domain":"y"}

{"id":"c","text":"three","domain":"x","extra":1}
"#;
        let recs: Vec<CorpusRecord> = parse(input).into_iter().map(Result::unwrap).collect();
        let ids: Vec<&str> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(recs[1].domain, "y");
    }

    #[test]
    fn duplicate_names_its_line() {
        let input = b"{\"id\":\"a\",\"text\":\"\",\"domain\":\"x\"}\n{\"id\":\"a\",\"text\":\"\",\"domain\":\"x\"}\n";
        let out = parse(input);
        assert_eq!(out.len(), 2);
        match &out[1] {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(*line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_invalid_utf8() {
        let out = parse(b"{\"id\":\"a\",\"text\":\"t\"}\n{not json\n{\"id\":\"z\",\"text\":\"t\"}\n");
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::Parse { line: 2, .. })));
        assert_eq!(out.len(), 2, "stream stops after an error");

        let out = parse(b"{\"id\":\"a\",\"text\":\"\xff\xfe\"}\n");
        assert!(matches!(&out[0], Err(Error::Parse { line: 1, message, .. }) if message.contains("UTF-8")));
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert!(parse(b"").is_empty());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![
            CorpusRecord { id: "1".into(), text: "héllo \"q\"\nline".into(), domain: "d".into() },
            CorpusRecord { id: "2".into(), text: String::new(), domain: String::new() },
        ];
        write_corpus(&path, &recs).unwrap();
        let back: Vec<CorpusRecord> = read_corpus(&path).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, recs);
        assert!(read_corpus(&dir.path().join("missing")).is_err());
    }
}

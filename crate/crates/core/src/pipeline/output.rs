//! Run-directory artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{RelevanceReport, Resample};
use crate::error::{Error, Result};
use crate::gradient::SelectionResult;

/// Writes artifacts into one run directory. Files written through the
/// writer are removed again unless [`RunWriter::finish`] is called, so a
/// failed run leaves no partial outputs behind.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dir: bool,
    finished: bool,
}

impl RunWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let created_dir = !dir.exists();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            written: Vec::new(),
            created_dir,
            finished: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Reserves `name` inside the run directory for cleanup and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        path
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_relevance(&mut self, report: &RelevanceReport) -> Result<PathBuf> {
        self.write_json("relevance.json", report)
    }

    pub fn write_resample(&mut self, resample: &Resample) -> Result<PathBuf> {
        let path = self.path("resample.csv");
        write_resample_csv(resample, &path)?;
        Ok(path)
    }

    /// selection.csv, selection.jsonl and timings.json.
    pub fn write_selection(&mut self, selection: &SelectionResult, seed: Option<u64>) -> Result<()> {
        selection.write_csv(&self.path("selection.csv"))?;
        selection.write_jsonl(seed, &self.path("selection.jsonl"))?;
        self.write_json("timings.json", &selection.timings())?;
        Ok(())
    }

    /// Keeps everything written so far.
    pub fn finish(mut self) {
        self.finished = true;
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        if self.finished {
            return;
        }
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        if self.created_dir {
            // Only succeeds if nothing else was put there.
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// `id,domain` for every resampled candidate, in candidate order.
pub fn write_resample_csv(resample: &Resample, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "domain"])?;
    for (id, domain) in resample.candidates.ids().iter().zip(resample.domains()) {
        w.write_record([id.as_str(), domain])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::SelectionMethod;

    fn selection() -> SelectionResult {
        let mut s = SelectionResult::new(SelectionMethod::GotD, 2);
        s.push("a", -1.0);
        s.push("b", 0.5);
        s.meta("time.solve_ms", 12).meta("seed", 3);
        s
    }

    #[test]
    fn finished_run_keeps_files() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("run");
        let mut w = RunWriter::create(&dir).unwrap();
        w.write_selection(&selection(), Some(3)).unwrap();
        w.finish();
        for f in ["selection.csv", "selection.jsonl", "timings.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let timings: std::collections::BTreeMap<String, String> =
            serde_json::from_str(&fs::read_to_string(dir.join("timings.json")).unwrap()).unwrap();
        assert_eq!(timings["solve_ms"], "12");
        let csv = fs::read_to_string(dir.join("selection.csv")).unwrap();
        assert_eq!(csv, "rank,id,score\n1,a,-1\n2,b,0.5\n");
    }

    #[test]
    fn abandoned_run_is_cleaned_up() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("run");
        {
            let mut w = RunWriter::create(&dir).unwrap();
            w.write_selection(&selection(), None).unwrap();
        }
        assert!(!dir.exists());

        let existing = root.path().join("kept");
        fs::create_dir(&existing).unwrap();
        fs::write(existing.join("other.txt"), "x").unwrap();
        {
            let mut w = RunWriter::create(&existing).unwrap();
            w.write_json("timings.json", &1).unwrap();
        }
        assert!(existing.join("other.txt").exists());
        assert!(!existing.join("timings.json").exists());
    }
}

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate domain: its embeddings and, optionally, its raw texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub record_count: usize,
    pub embedding_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
}

/// The candidate pool, partitioned by source domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCatalog {
    pub domains: Vec<DomainEntry>,
}

impl DomainCatalog {
    pub fn new(domains: Vec<DomainEntry>) -> Result<Self> {
        let catalog = Self { domains };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::invalid("catalog lists no domains"));
        }
        let mut names = HashSet::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) {
                return Err(Error::invalid(format!("domain {:?} listed twice", d.name)));
            }
            if d.record_count == 0 {
                return Err(Error::invalid(format!("domain {:?} has no records", d.name)));
            }
        }
        Ok(())
    }

    /// Reads a JSON manifest. Relative paths are resolved against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut catalog: DomainCatalog =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("invalid manifest: {e}"),
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for d in &mut catalog.domains {
            if d.embedding_path.is_relative() {
                d.embedding_path = base.join(&d.embedding_path);
            }
            if let Some(c) = &mut d.corpus_path {
                if c.is_relative() {
                    *c = base.join(&*c);
                }
            }
        }
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DomainEntry> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Domains sorted by name.
    pub fn by_name(&self) -> Vec<&DomainEntry> {
        let mut v: Vec<&DomainEntry> = self.domains.iter().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }
}

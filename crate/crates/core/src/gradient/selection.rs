use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CalibratedGradients;
use crate::error::{Error, Result};

/// Metadata keys with this prefix are wall-clock measurements; they are kept
/// out of the JSON Lines record so that reruns produce identical files.
pub const TIMING_PREFIX: &str = "time.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionMethod {
    #[serde(rename = "gotd")]
    GotD,
    #[serde(rename = "gotd-contrast")]
    GotDContrast,
    #[serde(rename = "dsir")]
    Dsir,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "all-domains")]
    AllDomains,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 6] = [
        SelectionMethod::GotD,
        SelectionMethod::GotDContrast,
        SelectionMethod::Dsir,
        SelectionMethod::Knn,
        SelectionMethod::Random,
        SelectionMethod::AllDomains,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::GotD => "gotd",
            SelectionMethod::GotDContrast => "gotd-contrast",
            SelectionMethod::Dsir => "dsir",
            SelectionMethod::Knn => "knn",
            SelectionMethod::Random => "random",
            SelectionMethod::AllDomains => "all-domains",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown selection method {s:?}")))
    }
}

/// Which end of the gradient ranking to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Most negative gradients toward a target we want to approach.
    #[default]
    Clean,
    /// Most positive gradients toward a target we want to move away from.
    Contrast,
}

/// A budgeted, ranked selection of sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub budget: usize,
    pub selected_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl SelectionResult {
    pub fn new(method: SelectionMethod, budget: usize) -> Self {
        Self {
            method,
            budget,
            selected_ids: Vec::new(),
            scores: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.selected_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, score: f64) {
        self.selected_ids.push(id.into());
        self.scores.push(score);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    /// `rank,id,score` with 1-based ranks.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "id", "score"])?;
        for (rank, (id, score)) in self.selected_ids.iter().zip(&self.scores).enumerate() {
            w.write_record([(rank + 1).to_string(), id.clone(), score.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<(usize, String, f64)>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }

    /// One JSON object per line; timing metadata is excluded.
    pub fn write_jsonl(&self, seed: Option<u64>, path: &Path) -> Result<()> {
        let record = JsonlRecord {
            method: self.method,
            budget: self.budget,
            seed,
            selected: self.len(),
            metadata: self
                .metadata
                .iter()
                .filter(|(k, _)| !k.starts_with(TIMING_PREFIX))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Timing entries only, with the prefix stripped.
    pub fn timings(&self) -> BTreeMap<String, String> {
        self.metadata
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(TIMING_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub method: SelectionMethod,
    pub budget: usize,
    pub seed: Option<u64>,
    pub selected: usize,
    pub metadata: BTreeMap<String, String>,
}

/// Ranks candidates by calibrated gradient and keeps the first `budget`.
///
/// Clean mode takes the most negative gradients; Contrast mode the most
/// positive. Equal gradients are ordered by ascending id.
pub fn select_got_d(
    gradients: &CalibratedGradients,
    budget: usize,
    mode: SelectionMode,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::invalid("selection budget must be at least 1"));
    }
    if gradients.is_empty() {
        return Err(Error::invalid("no gradients to select from"));
    }
    let grad = &gradients.grad;
    let ids = &gradients.ids;
    let mut order: Vec<usize> = (0..grad.len()).collect();
    let by_id = |a: &usize, b: &usize| ids[*a].cmp(&ids[*b]);
    match mode {
        SelectionMode::Clean => {
            order.sort_unstable_by(|a, b| grad[*a].total_cmp(&grad[*b]).then_with(|| by_id(a, b)))
        }
        SelectionMode::Contrast => {
            order.sort_unstable_by(|a, b| grad[*b].total_cmp(&grad[*a]).then_with(|| by_id(a, b)))
        }
    }
    let method = match mode {
        SelectionMode::Clean => SelectionMethod::GotD,
        SelectionMode::Contrast => SelectionMethod::GotDContrast,
    };
    let mut result = SelectionResult::new(method, budget);
    for &i in order.iter().take(budget) {
        result.push(ids[i].clone(), grad[i]);
    }
    result.meta("candidates", grad.len());
    Ok(result)
}

//! Self-contained property suites on seeded fixtures. Each suite produces a
//! [`VerifyReport`] of named checks with a measured value and a threshold.

pub mod fixtures;
mod suites;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use fixtures::{Figure3, PerfScale};
pub use suites::{brute_force_knn, dsir_reference_top_k, least_squares_slope};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Gradient,
    Taylor,
    Lipschitz,
    Figure3,
    Perf,
    Baselines,
    Io,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Oracle,
        Suite::Gradient,
        Suite::Taylor,
        Suite::Lipschitz,
        Suite::Figure3,
        Suite::Perf,
        Suite::Baselines,
        Suite::Io,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Gradient => "gradient",
            Suite::Taylor => "taylor",
            Suite::Lipschitz => "lipschitz",
            Suite::Figure3 => "figure3",
            Suite::Perf => "perf",
            Suite::Baselines => "baselines",
            Suite::Io => "io",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|s| s.as_str()).collect();
                Error::invalid(format!("unknown suite {s:?}, expected one of {}", names.join("|")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub threshold: f64,
    pub runtime_ms: u64,
}

impl Check {
    /// Passes when `measured <= threshold`.
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64, runtime: Duration) -> Self {
        Self::new(name, measured <= threshold, measured, threshold, runtime)
    }

    /// Passes when `measured >= threshold`.
    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64, runtime: Duration) -> Self {
        Self::new(name, measured >= threshold, measured, threshold, runtime)
    }

    fn new(name: impl Into<String>, pass: bool, measured: f64, threshold: f64, runtime: Duration) -> Self {
        // JSON has no NaN or infinity: a non-finite measurement fails and is
        // reported as f64::MAX.
        let finite = measured.is_finite();
        Self {
            name: name.into(),
            status: if pass && finite { Status::Pass } else { Status::Fail },
            measured: if finite { measured } else { f64::MAX },
            threshold,
            runtime_ms: runtime.as_millis() as u64,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub seed: u64,
    /// Echo of the fixture sizes and solver settings used.
    pub config: serde_json::Value,
    /// Extra measurements that are not pass/fail checks.
    pub diagnostics: BTreeMap<String, f64>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn file_name(suite: Suite) -> String {
        format!("verify-{suite}.json")
    }

    /// Writes `verify-<suite>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(self.suite));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Worker threads for the perf suite.
    pub workers: usize,
    pub perf: PerfScale,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 8,
            perf: PerfScale::default(),
        }
    }
}

/// Runs one suite. Suites that need files (perf, baselines, io) create a
/// scratch directory inside `work_dir` and remove it afterwards.
pub fn run_suite(suite: Suite, opts: &VerifyOptions, work_dir: &Path) -> Result<VerifyReport> {
    let clock = Instant::now();
    let mut out = suites::Outcome::default();
    match suite {
        Suite::Oracle => suites::oracle(opts, &mut out)?,
        Suite::Gradient => suites::gradient(opts, &mut out)?,
        Suite::Taylor => suites::taylor(opts, &mut out)?,
        Suite::Lipschitz => suites::lipschitz(opts, &mut out)?,
        Suite::Figure3 => suites::figure3(opts, &mut out)?,
        Suite::Perf => with_scratch(work_dir, "perf", |dir| suites::perf(opts, dir, &mut out))?,
        Suite::Baselines => with_scratch(work_dir, "baselines", |dir| suites::baselines(opts, dir, &mut out))?,
        Suite::Io => with_scratch(work_dir, "io", |dir| suites::io(opts, dir, &mut out))?,
    }
    log::info!("suite {suite} finished in {:.1} s", clock.elapsed().as_secs_f64());
    Ok(VerifyReport {
        suite,
        checks: out.checks,
        seed: opts.seed,
        config: serde_json::Value::Object(out.config),
        diagnostics: out.diagnostics,
    })
}

fn with_scratch<T>(work_dir: &Path, name: &str, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let dir = work_dir.join(format!("verify-{name}-fixture"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let result = f(&dir);
    let _ = std::fs::remove_dir_all(&dir);
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn check_status() {
        let t = Duration::from_millis(3);
        assert!(Check::at_most("a", 1.0, 1.0, t).passed());
        assert!(!Check::at_most("a", 1.5, 1.0, t).passed());
        assert!(Check::at_least("a", 2.0, 1.6, t).passed());
        let nan = Check::at_most("a", f64::NAN, 1.0, t);
        assert!(!nan.passed());
        assert_eq!(nan.measured, f64::MAX);
        assert_eq!(nan.runtime_ms, 3);
    }

    #[test]
    fn report_file() {
        let dir = tempfile::tempdir().unwrap();
        let report = VerifyReport {
            suite: Suite::Taylor,
            checks: vec![Check::at_least("taylor.loglog_slope", 2.0, 1.6, Duration::ZERO)],
            seed: 4,
            config: serde_json::json!({"lambdas": [0.02]}),
            diagnostics: BTreeMap::new(),
        };
        let path = report.write(dir.path()).unwrap();
        assert!(path.ends_with("verify-taylor.json"));
        let back: VerifyReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, report);
        assert!(back.all_passed());
    }
}

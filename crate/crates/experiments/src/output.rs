//! CSV and JSON emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{ExpError, Result};

/// Writes `rows` as RFC 4180 CSV with a header row and LF line endings.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| ExpError::output(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| ExpError::output(path, e))?;
    }
    w.flush().map_err(|e| ExpError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExpError::output(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| ExpError::output(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExpError::output(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ExpError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    /// Measured values behind the verdict, or the reason a check was skipped.
    pub detail: serde_json::Value,
}

impl Verdict {
    pub fn check(passed: bool, detail: impl Serialize) -> Self {
        let status = if passed { Status::Pass } else { Status::Fail };
        Self {
            status,
            detail: to_value(detail),
        }
    }

    pub fn skipped(reason: impl Into<String>) -> Self {
        Self {
            status: Status::Skipped,
            detail: serde_json::Value::String(reason.into()),
        }
    }
}

pub type Verdicts = BTreeMap<String, Verdict>;

pub(crate) fn to_value(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v)
        .unwrap_or_else(|e| serde_json::Value::String(format!("unserializable: {e}")))
}

/// Everything a run reports besides its CSV files; written as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub started_unix_ms: u64,
    pub elapsed_ms: u64,
    pub results: serde_json::Value,
    pub verdicts: Verdicts,
    /// Files written by the run, relative to the output directory.
    pub files: Vec<PathBuf>,
}

impl Summary {
    /// False when any check failed; skipped checks do not count as failures.
    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|v| v.status != Status::Fail)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.verdicts
            .iter()
            .filter(|(_, v)| v.status == Status::Fail)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: f64,
        b: Option<f64>,
        c: bool,
    }

    #[test]
    fn csv_uses_lf_and_round_trips_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows = vec![
            Row {
                a: 0.1 + 0.2,
                b: None,
                c: true,
            },
            Row {
                a: -1e-300,
                b: Some(f64::MAX),
                c: false,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert!(text.starts_with("a,b,c\n"));
        assert_eq!(read_csv::<Row>(&path).unwrap(), rows);
    }

    #[test]
    fn skipped_checks_do_not_fail_a_run() {
        let v = Verdict::skipped("no Hessian above the dimension limit");
        assert_eq!(v.status, Status::Skipped);
        assert_eq!(
            v.detail,
            serde_json::json!("no Hessian above the dimension limit")
        );
        assert_eq!(Verdict::check(false, 1.5).status, Status::Fail);
    }
}

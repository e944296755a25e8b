//! JSON run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimator::Method;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_assets: usize,
    pub n_periods: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
    /// Wall-clock time. Only filled in on request since it breaks byte-level
    /// reproducibility of reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

/// Results for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub method: Method,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportEntry {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            hyperparameters: BTreeMap::new(),
            metrics: BTreeMap::new(),
            error: None,
        }
    }
}

/// One-sided paired sign test of `reference` against `benchmark`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestEntry {
    pub reference: Method,
    pub benchmark: Method,
    pub measure: String,
    pub n_plus: usize,
    pub n: usize,
    pub p_value: f64,
}

/// A single tidy observation (one value of one measure for one method in one
/// repetition, window or sweep point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scope: String,
    pub index: usize,
    pub method: Method,
    pub measure: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub metadata: RunMetadata,
    #[serde(default)]
    pub entries: Vec<ReportEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sign_tests: Vec<SignTestEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<Observation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log: Vec<String>,
}

impl Report {
    pub fn new(kind: impl Into<String>, metadata: RunMetadata) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            ..Default::default()
        }
    }

    pub fn entry(&self, method: Method) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.method == method)
    }

    /// Checks that every metric value is finite.
    pub fn validate(&self) -> Result<()> {
        let bad = self
            .entries
            .iter()
            .flat_map(|e| e.metrics.iter().map(move |(k, v)| (e.method, k, *v)))
            .chain(
                self.observations
                    .iter()
                    .map(|o| (o.method, &o.measure, o.value)),
            )
            .find(|(_, _, v)| !v.is_finite());
        if let Some((m, k, v)) = bad {
            return Err(Error::Data(format!("metric '{k}' for {m} is not finite ({v})")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes `report` as pretty-printed UTF-8 JSON. Field order is fixed by the
/// type definitions and maps are sorted, so equal reports give equal bytes.
pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = report.to_json()?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

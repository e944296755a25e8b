//! Files written by the subcommands: JSON reports and manifests plus tidy CSV
//! tables.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use blockcov::report::{write_report, Report};
use blockcov::Matrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    inputs: &'a [(String, String)],
    outputs: &'a [String],
    config: &'a RunConfig,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Write { path: root.to_path_buf(), source })?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn report(&mut self, name: &str, report: &Report) -> Result<(), CliError> {
        let path = self.path(name);
        write_report(report, path)?;
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let err = |source| CliError::Csv { path: path.clone(), source };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(|source| CliError::Write { path: path.clone(), source })
    }

    /// One row per observation: `scope,index,method,measure,value`.
    pub fn observations(&mut self, name: &str, report: &Report) -> Result<(), CliError> {
        let header = ["scope", "index", "method", "measure", "value"].map(String::from);
        let rows: Vec<Vec<String>> = report
            .observations
            .iter()
            .map(|o| vec![o.scope.clone(), o.index.to_string(), o.method.to_string(), o.measure.clone(), o.value.to_string()])
            .collect();
        self.table(name, &header, &rows)
    }

    /// One row per method with every aggregate metric as a column.
    pub fn summary(&mut self, name: &str, report: &Report) -> Result<(), CliError> {
        let keys: BTreeSet<&String> = report.entries.iter().flat_map(|e| e.metrics.keys()).collect();
        let mut header = vec!["method".to_string()];
        header.extend(keys.iter().map(|k| k.to_string()));
        header.push("error".into());
        let rows: Vec<Vec<String>> = report
            .entries
            .iter()
            .map(|e| {
                let mut row = vec![e.method.to_string()];
                row.extend(keys.iter().map(|k| e.metrics.get(*k).map(f64::to_string).unwrap_or_default()));
                row.push(e.error.clone().unwrap_or_default());
                row
            })
            .collect();
        self.table(name, &header, &rows)
    }

    pub fn sign_tests(&mut self, name: &str, report: &Report) -> Result<(), CliError> {
        let header = ["reference", "benchmark", "measure", "n_plus", "n", "p_value"].map(String::from);
        let rows: Vec<Vec<String>> = report
            .sign_tests
            .iter()
            .map(|s| {
                vec![
                    s.reference.to_string(),
                    s.benchmark.to_string(),
                    s.measure.clone(),
                    s.n_plus.to_string(),
                    s.n.to_string(),
                    s.p_value.to_string(),
                ]
            })
            .collect();
        self.table(name, &header, &rows)
    }

    /// Wide table of one measure with one row per sweep point and one column
    /// per method.
    pub fn sweep_table(&mut self, name: &str, report: &Report, measure: &str) -> Result<(), CliError> {
        let methods: BTreeSet<_> = report.observations.iter().map(|o| o.method).collect();
        let dims: BTreeSet<usize> = report.observations.iter().map(|o| o.index).collect();
        let mut header = vec!["p".to_string()];
        header.extend(methods.iter().map(|m| m.to_string()));
        let rows: Vec<Vec<String>> = dims
            .iter()
            .map(|&p| {
                let mut row = vec![p.to_string()];
                row.extend(methods.iter().map(|&m| {
                    report
                        .observations
                        .iter()
                        .find(|o| o.index == p && o.method == m && o.measure == measure)
                        .map(|o| o.value.to_string())
                        .unwrap_or_default()
                }));
                row
            })
            .collect();
        self.table(name, &header, &rows)
    }

    /// Square matrix with asset identifiers as the header and first column.
    pub fn matrix(&mut self, name: &str, assets: &[String], m: &Matrix) -> Result<(), CliError> {
        let mut header = vec!["asset".to_string()];
        header.extend(assets.iter().cloned());
        let rows: Vec<Vec<String>> = assets
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut row = vec![a.clone()];
                row.extend((0..m.ncols()).map(|j| m[(i, j)].to_string()));
                row
            })
            .collect();
        self.table(name, &header, &rows)
    }

    /// Writes `manifest.json` with the resolved configuration and the list of
    /// files written so far.
    pub fn manifest(mut self, command: &str, inputs: &[(String, String)], config: &RunConfig) -> Result<(), CliError> {
        let path = self.root.join("manifest.json");
        self.written.sort();
        let manifest = Manifest { command, version: env!("CARGO_PKG_VERSION"), inputs, outputs: &self.written, config };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(blockcov::Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| CliError::Write { path, source })
    }
}

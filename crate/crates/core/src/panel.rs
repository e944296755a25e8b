//! Return panels, classification data and universe selection.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A `p x T` panel of arithmetic returns, one row per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    assets: Vec<String>,
    times: Vec<String>,
    values: Matrix,
}

impl ReturnPanel {
    /// Builds a validated panel: `p >= 2`, `T >= 3`, unique identifiers and
    /// finite values.
    pub fn new(assets: Vec<String>, times: Vec<String>, values: Matrix) -> Result<Self> {
        if values.nrows() != assets.len() || values.ncols() != times.len() {
            return Err(Error::shape(
                format!("{}x{}", assets.len(), times.len()),
                format!("{}x{}", values.nrows(), values.ncols()),
            ));
        }
        if assets.len() < 2 {
            return Err(Error::Data(format!(
                "panel needs at least 2 assets, got {}",
                assets.len()
            )));
        }
        if times.len() < 3 {
            return Err(Error::Data(format!(
                "panel needs at least 3 periods, got {}",
                times.len()
            )));
        }
        let mut seen = HashSet::with_capacity(assets.len());
        for a in &assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::Data(format!("duplicate asset identifier '{a}'")));
            }
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::Data(format!(
                "non-finite return for asset '{}' at '{}'",
                assets[r], times[c]
            )));
        }
        Ok(Self {
            assets,
            times,
            values,
        })
    }

    /// Panel with generated identifiers `A0..`, `t0..`.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        let assets = (0..values.nrows()).map(|i| format!("A{i}")).collect();
        let times = (0..values.ncols()).map(|t| format!("t{t}")).collect();
        Self::new(assets, times, values)
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_periods(&self) -> usize {
        self.times.len()
    }

    /// Columns `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_periods() {
            return Err(Error::Data(format!(
                "window {start}..{} exceeds {} periods",
                start + len,
                self.n_periods()
            )));
        }
        Self::new(
            self.assets.clone(),
            self.times[start..start + len].to_vec(),
            self.values.columns(start, len).into_owned(),
        )
    }

    /// Rows listed in `rows`, in that order.
    pub fn select_assets(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&r| self.assets[r].clone()).collect(),
            self.times.clone(),
            crate::linalg::select_rows(&self.values, rows),
        )
    }
}

/// Asset identifier to group code (for example a SIC sector code).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationMap(pub BTreeMap<String, String>);

impl ClassificationMap {
    pub fn code(&self, asset: &str) -> Option<&str> {
        self.0.get(asset).map(String::as_str)
    }

    pub fn insert(&mut self, asset: impl Into<String>, code: impl Into<String>) {
        self.0.insert(asset.into(), code.into());
    }
}

impl<A: Into<String>, C: Into<String>> FromIterator<(A, C)> for ClassificationMap {
    fn from_iter<I: IntoIterator<Item = (A, C)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(a, c)| (a.into(), c.into())).collect())
    }
}

/// Market capitalisations over time; cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketCapPanel {
    pub assets: Vec<String>,
    pub times: Vec<String>,
    /// `values[asset][time]`
    pub values: Vec<Vec<Option<f64>>>,
}

impl MarketCapPanel {
    /// Caps at `at_time` for the assets whose caps are present and positive
    /// on every period in `times`.
    pub fn snapshot(&self, times: &[String], at_time: &str) -> BTreeMap<String, f64> {
        let index: BTreeMap<&str, usize> = self
            .times
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let window: Option<Vec<usize>> = times.iter().map(|t| index.get(t.as_str()).copied()).collect();
        let (Some(window), Some(&at)) = (window, index.get(at_time)) else {
            return BTreeMap::new();
        };
        let mut out = BTreeMap::new();
        for (a, row) in self.assets.iter().zip(&self.values) {
            let complete = window
                .iter()
                .all(|&t| matches!(row[t], Some(v) if v.is_finite() && v > 0.0));
            if let (true, Some(v)) = (complete, row[at]) {
                out.insert(a.clone(), v);
            }
        }
        out
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = open_csv(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: 0,
            message: e.to_string(),
        })?;
        rows.push(rec);
    }
    Ok(rows)
}

/// Splits a wide CSV into (asset ids, time labels, raw cells) after checking
/// the header and row lengths.
fn wide_cells(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<csv::StringRecord>)> {
    let mut rows = csv_rows(path)?.into_iter();
    let header = rows.next().ok_or_else(|| Error::Parse {
        row: 1,
        column: 1,
        message: "empty file".into(),
    })?;
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "header must be `date,ASSET1,ASSET2,...`".into(),
        });
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = HashSet::new();
    for (c, a) in assets.iter().enumerate() {
        if a.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: c + 2,
                message: "empty asset identifier".into(),
            });
        }
        if !seen.insert(a.clone()) {
            return Err(Error::Parse {
                row: 1,
                column: c + 2,
                message: format!("duplicate asset identifier '{a}'"),
            });
        }
    }
    let mut times = Vec::new();
    let mut body = Vec::new();
    for (i, rec) in rows.enumerate() {
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: rec.len().min(header.len()) + 1,
                message: format!("ragged row: {} fields, header has {}", rec.len(), header.len()),
            });
        }
        times.push(rec[0].to_string());
        body.push(rec);
    }
    Ok((assets, times, body))
}

/// Reads a wide returns CSV (`date,ASSET1,ASSET2,...`, one row per period).
/// Every cell must hold a finite decimal number.
pub fn load_returns(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let path = path.as_ref();
    let (assets, times, body) = wide_cells(path)?;
    let mut values = Matrix::zeros(assets.len(), times.len());
    for (t, rec) in body.iter().enumerate() {
        for (a, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: t + 2,
                column: a + 2,
                message: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("non-numeric value '{cell}'")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: t + 2,
                    column: a + 2,
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values[(a, t)] = v;
        }
    }
    ReturnPanel::new(assets, times, values)
}

/// Writes a panel in the wide returns CSV format. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_panel(panel: &ReturnPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("date");
    for a in panel.assets() {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (t, time) in panel.times().iter().enumerate() {
        out.push_str(time);
        for a in 0..panel.n_assets() {
            out.push(',');
            out.push_str(&panel.values()[(a, t)].to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads an `asset,code` classification CSV. A leading `asset,code` header
/// row is optional.
pub fn load_classification(path: impl AsRef<Path>) -> Result<ClassificationMap> {
    let path = path.as_ref();
    let mut map = ClassificationMap::default();
    for (i, rec) in csv_rows(path)?.iter().enumerate() {
        if rec.len() != 2 {
            return Err(Error::Parse {
                row: i + 1,
                column: rec.len().min(2) + 1,
                message: "expected two columns `asset,code`".into(),
            });
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("asset") && rec[1].eq_ignore_ascii_case("code") {
            continue;
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::Parse {
                row: i + 1,
                column: if rec[0].is_empty() { 1 } else { 2 },
                message: "empty field".into(),
            });
        }
        if let Some(prev) = map.code(&rec[0]) {
            if prev != &rec[1] {
                return Err(Error::Parse {
                    row: i + 1,
                    column: 2,
                    message: format!("conflicting codes for asset '{}'", &rec[0]),
                });
            }
        }
        map.insert(&rec[0], &rec[1]);
    }
    Ok(map)
}

/// Reads a wide market-cap CSV in the returns layout. Empty or `NA` cells are
/// recorded as missing.
pub fn load_market_caps(path: impl AsRef<Path>) -> Result<MarketCapPanel> {
    let path = path.as_ref();
    let (assets, times, body) = wide_cells(path)?;
    let mut values = vec![vec![None; times.len()]; assets.len()];
    for (t, rec) in body.iter().enumerate() {
        for (a, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: t + 2,
                column: a + 2,
                message: format!("non-numeric value '{cell}'"),
            })?;
            values[a][t] = Some(v);
        }
    }
    Ok(MarketCapPanel {
        assets,
        times,
        values,
    })
}

/// Restricts `panel` to the `p` largest-cap assets that have a market cap,
/// at least one non-zero return in both the first `train_len` periods and the
/// following `test_len` periods, and a classification code. Ties in cap are
/// broken by ascending identifier; rows keep the panel's order.
pub fn select_universe(
    panel: &ReturnPanel,
    marketcaps: &BTreeMap<String, f64>,
    classes: &ClassificationMap,
    p: usize,
    train_len: usize,
    test_len: usize,
) -> Result<ReturnPanel> {
    if train_len + test_len > panel.n_periods() {
        return Err(Error::Data(format!(
            "train_len + test_len = {} exceeds {} periods",
            train_len + test_len,
            panel.n_periods()
        )));
    }
    let values = panel.values();
    let has_nonzero = |row: usize, from: usize, len: usize| (from..from + len).any(|t| values[(row, t)] != 0.0);
    let mut eligible: Vec<(usize, f64)> = panel
        .assets()
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            let cap = *marketcaps.get(a)?;
            if !cap.is_finite() {
                return None;
            }
            classes.code(a)?;
            (has_nonzero(i, 0, train_len) && has_nonzero(i, train_len, test_len)).then_some((i, cap))
        })
        .collect();
    if eligible.len() < p {
        return Err(Error::Data(format!(
            "only {} assets pass the universe filters, {p} requested",
            eligible.len()
        )));
    }
    eligible.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| panel.assets()[a.0].cmp(&panel.assets()[b.0]))
    });
    let mut rows: Vec<usize> = eligible[..p].iter().map(|&(i, _)| i).collect();
    rows.sort_unstable();
    panel.select_assets(&rows)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{gmv_weights, portfolio_risk, rand_index, summarize, support_labels, DEFAULT_ZERO_TOL};
use crate::cluster::{mask_from_classification, ClusterAssignment};
use crate::error::{Error, Result};
use crate::estimator::{compare, EstimatorConfig, Method};
use crate::linalg::row_covariance;
use crate::panel::{select_universe, ClassificationMap, MarketCapPanel, ReturnPanel};
use crate::report::{Observation, Report, RunMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub methods: Vec<Method>,
    pub estimator: EstimatorConfig,
    pub train_len: usize,
    pub hold_len: usize,
    /// Number of assets in each window's universe.
    pub n_assets: usize,
    pub annualize: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Csh, Method::Csk, Method::Csi, Method::Soft, Method::Al, Method::Scad],
            estimator: EstimatorConfig::default(),
            train_len: 252,
            hold_len: 22,
            n_assets: 100,
            annualize: true,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.train_len < 3 || self.hold_len < 2 || self.n_assets < 2 {
            return Err(Error::Config("backtest needs train_len >= 3, hold_len >= 2 and n_assets >= 2".into()));
        }
        Ok(())
    }

    /// `floor((T - train_len) / hold_len)`.
    pub fn n_windows(&self, n_periods: usize) -> usize {
        n_periods.saturating_sub(self.train_len) / self.hold_len
    }
}

struct WindowOutcome {
    observations: Vec<Observation>,
    k: Option<usize>,
    log: Vec<String>,
}

fn run_window(
    panel: &ReturnPanel,
    caps: &MarketCapPanel,
    classes: &ClassificationMap,
    config: &BacktestConfig,
    methods: &[Method],
    w: usize,
) -> Result<WindowOutcome> {
    let (train, hold) = (config.train_len, config.hold_len);
    let window = panel.window(w * hold, train + hold)?;
    let snapshot = caps.snapshot(window.times(), &window.times()[train - 1]);
    let universe = select_universe(&window, &snapshot, classes, config.n_assets, train, hold)?;
    let train_panel = universe.window(0, train)?;
    let eval_cov = row_covariance(&universe.window(train, hold)?.values().clone())?;
    let industry = mask_from_classification(classes, universe.assets())?;
    let comparison = compare(&train_panel, methods, &config.estimator, Some(classes))?;
    let mut out = WindowOutcome { observations: Vec::new(), k: Some(comparison.fit.k), log: Vec::new() };
    for (method, result) in &comparison.estimates {
        let scored = result.as_ref().map_err(|e| e.to_string()).and_then(|est| {
            let risk = portfolio_risk(&gmv_weights(&est.sigma).map_err(|e| e.to_string())?, &eval_cov, config.annualize)
                .map_err(|e| e.to_string())?;
            let labels: ClusterAssignment =
                est.assignment.clone().unwrap_or_else(|| support_labels(&est.psi, DEFAULT_ZERO_TOL));
            let ri = rand_index(labels.labels(), industry.assignment().labels()).map_err(|e| e.to_string())?;
            Ok((risk, ri))
        });
        match scored {
            Ok((risk, ri)) => {
                for (measure, value) in [("sigma_p", risk), ("rand_index_industry", ri)] {
                    out.observations.push(Observation {
                        scope: "window".into(),
                        index: w,
                        method: *method,
                        measure: measure.into(),
                        value,
                    });
                }
            }
            Err(e) => out.log.push(format!("window {w}: {method} failed: {e}")),
        }
    }
    Ok(out)
}

/// Rolling minimum-variance backtest: estimate on `train_len` days, hold for
/// `hold_len` days and measure realized risk with the holding-window sample
/// covariance.
pub fn run_backtest(
    panel: &ReturnPanel,
    caps: &MarketCapPanel,
    classes: &ClassificationMap,
    config: &BacktestConfig,
) -> Result<Report> {
    config.validate()?;
    let n_windows = config.n_windows(panel.n_periods());
    if n_windows == 0 {
        return Err(Error::Data(format!(
            "{} periods are too few for train_len {} plus hold_len {}",
            panel.n_periods(),
            config.train_len,
            config.hold_len
        )));
    }
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let outcomes: Vec<WindowOutcome> = (0..n_windows)
        .into_par_iter()
        .map(|w| {
            run_window(panel, caps, classes, config, &methods, w).unwrap_or_else(|e| WindowOutcome {
                observations: Vec::new(),
                k: None,
                log: vec![format!("window {w}: skipped: {e}")],
            })
        })
        .collect();
    let mut report = Report::new(
        "backtest",
        RunMetadata {
            seed: Some(config.estimator.seed),
            n_assets: config.n_assets,
            n_periods: panel.n_periods(),
            ..Default::default()
        },
    );
    let ks: Vec<Option<usize>> = outcomes.iter().map(|o| o.k).collect();
    let in_band = ks.iter().flatten().filter(|&&k| (2..=10).contains(&k)).count();
    report.metadata.extra.insert("windows".into(), json!(n_windows));
    report.metadata.extra.insert("k".into(), json!(ks));
    report.metadata.extra.insert("skipped_windows".into(), json!(ks.iter().filter(|k| k.is_none()).count()));
    for o in outcomes {
        report.observations.extend(o.observations);
        report.log.extend(o.log);
    }
    let estimated = ks.iter().flatten().count();
    if estimated > 0 {
        report.log.push(format!("factor count within [2, 10] in {in_band} of {estimated} windows"));
    }
    report.entries = summarize(&methods, &report.observations);
    Ok(report)
}

//! End-to-end covariance estimators: common component plus an idiosyncratic
//! estimate from thresholding or clustering with block shrinkage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cluster::{
    mask_from_classification, mask_from_labels, select_hyperparameter, ClusterAssignment, ClusterMethod, Linkage,
    SelectionConfig,
};
use crate::error::{Error, Result};
use crate::factor::{fit_factors, FactorConfig, FactorFit};
use crate::linalg::{diagonal_part, min_eigenvalue, symmetrize, Matrix};
use crate::panel::{ClassificationMap, ReturnPanel};
use crate::report::{Report, ReportEntry, RunMetadata};
use crate::seed::derive_seed;
use crate::shrinkage::{shrink_idiosyncratic, ShrinkageConfig};
use crate::threshold::{log_grid, select_tau, ThresholdKind, AL_A, SCAD_A};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Csh,
    Csk,
    Csi,
    Soft,
    Al,
    Scad,
    Hard,
    Diag,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Csh,
        Method::Csk,
        Method::Csi,
        Method::Soft,
        Method::Al,
        Method::Scad,
        Method::Hard,
        Method::Diag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Csh => "CSH",
            Method::Csk => "CSK",
            Method::Csi => "CSI",
            Method::Soft => "SOFT",
            Method::Al => "AL",
            Method::Scad => "SCAD",
            Method::Hard => "HARD",
            Method::Diag => "DIAG",
        }
    }

    pub fn threshold_kind(self) -> Option<ThresholdKind> {
        match self {
            Method::Soft => Some(ThresholdKind::Soft),
            Method::Al => Some(ThresholdKind::Al),
            Method::Scad => Some(ThresholdKind::Scad),
            Method::Hard => Some(ThresholdKind::Hard),
            _ => None,
        }
    }

    /// Methods whose idiosyncratic part is a shrunk block-diagonal matrix.
    pub fn is_block(self) -> bool {
        matches!(self, Method::Csh | Method::Csk | Method::Csi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_size: usize,
    pub scad_a: f64,
    pub al_a: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { grid_min: 0.1, grid_max: 4.0, grid_size: 50, scad_a: SCAD_A, al_a: AL_A }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_min > 0.0 && self.grid_max >= self.grid_min && self.grid_max.is_finite()) || self.grid_size == 0 {
            return Err(Error::Config(format!(
                "threshold grid [{}, {}] with {} points is invalid",
                self.grid_min, self.grid_max, self.grid_size
            )));
        }
        if !(self.scad_a > 2.0) {
            return Err(Error::Config(format!("SCAD shape {} must exceed 2", self.scad_a)));
        }
        if !(self.al_a > 0.0) {
            return Err(Error::Config(format!("adaptive-lasso shape {} must be positive", self.al_a)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.grid_min, self.grid_max, self.grid_size)
    }

    fn shape(&self, kind: ThresholdKind) -> f64 {
        match kind {
            ThresholdKind::Scad => self.scad_a,
            ThresholdKind::Al => self.al_a,
            _ => kind.default_shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub factor: FactorConfig,
    pub threshold: ThresholdConfig,
    pub selection: SelectionConfig,
    pub linkage: Linkage,
    pub shrinkage: ShrinkageConfig,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            factor: FactorConfig::default(),
            threshold: ThresholdConfig::default(),
            selection: SelectionConfig::default(),
            linkage: Linkage::Average,
            shrinkage: ShrinkageConfig::default(),
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        self.selection.validate()?;
        self.shrinkage.validate()
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub method: Method,
    pub sigma: Matrix,
    pub psi: Matrix,
    pub k: usize,
    pub hyperparameters: BTreeMap<String, Value>,
    /// Smallest eigenvalue of the idiosyncratic part.
    pub psi_min_eigenvalue: f64,
    pub assignment: Option<ClusterAssignment>,
}

impl CovarianceEstimate {
    pub fn min_eigenvalue(&self) -> Result<f64> {
        min_eigenvalue(&self.sigma)
    }
}

/// Fits the factor step on `panel` and runs one estimator.
pub fn estimate(
    panel: &ReturnPanel,
    method: Method,
    config: &EstimatorConfig,
    classes: Option<&ClassificationMap>,
) -> Result<CovarianceEstimate> {
    config.validate()?;
    if method == Method::Csi && classes.is_none() {
        return Err(Error::Config("CSI needs a classification map".into()));
    }
    let fit = fit_factors(panel, &config.factor)?;
    estimate_with_fit(panel, &fit, method, config, classes)
}

/// Runs one estimator on an existing factor fit of `panel`.
pub fn estimate_with_fit(
    panel: &ReturnPanel,
    fit: &FactorFit,
    method: Method,
    config: &EstimatorConfig,
    classes: Option<&ClassificationMap>,
) -> Result<CovarianceEstimate> {
    let p = fit.n_assets();
    if panel.n_assets() != p {
        return Err(Error::shape(p, panel.n_assets()));
    }
    let common = fit.common_component();
    let s = &fit.ortho_complement;
    let seed = derive_seed(config.seed, &[method as u64]);
    let mut hyper = BTreeMap::new();
    let mut assignment = None;

    let (psi, psi_min) = if let Some(kind) = method.threshold_kind() {
        let a = config.threshold.shape(kind);
        let grid = config.threshold.grid();
        let sel = select_tau(&fit.residuals, s, kind, a, &grid, &config.selection.cv, Some(&common))?;
        hyper.insert("tau".into(), json!(sel.tau));
        hyper.insert("shape".into(), json!(a));
        hyper.insert("diagonal_fallback".into(), json!(sel.fallback));
        let min = min_eigenvalue(&sel.psi)?;
        (sel.psi, min)
    } else if method == Method::Diag {
        let psi = diagonal_part(s);
        let min = psi.diagonal().min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        (psi, min)
    } else {
        let mask = match method {
            Method::Csi => {
                let classes = classes.ok_or_else(|| Error::Config("CSI needs a classification map".into()))?;
                mask_from_classification(classes, panel.assets())?
            }
            Method::Csk | Method::Csh => {
                let cm = if method == Method::Csk {
                    ClusterMethod::KMeans
                } else {
                    ClusterMethod::Hierarchical(config.linkage)
                };
                let sel = select_hyperparameter(&fit.residuals, s, cm, &config.selection, seed)?;
                if method == Method::Csk {
                    hyper.insert("m".into(), json!(sel.phi));
                } else {
                    hyper.insert("linkage".into(), json!(config.linkage.name()));
                    hyper.insert("merges".into(), json!(sel.phi));
                    hyper.insert("cutoff".into(), json!(sel.cutoff));
                }
                hyper.insert("cv_evaluations".into(), json!(sel.cv_errors.len()));
                hyper.insert("stopped_early".into(), json!(sel.stopped_early));
                mask_from_labels(&sel.assignment)
            }
            _ => unreachable!("non-block methods handled above"),
        };
        let est = shrink_idiosyncratic(&fit.residuals, s, &mask, &config.shrinkage)?;
        let alphas: Vec<f64> = est.blocks.iter().filter(|b| b.members.len() > 1).map(|b| b.alpha).collect();
        hyper.insert("n_clusters".into(), json!(mask.assignment().n_clusters()));
        hyper.insert("alphas".into(), json!(alphas));
        hyper.insert("floored_blocks".into(), json!(est.blocks.iter().filter(|b| b.floored).count()));
        assignment = Some(mask.assignment().clone());
        (est.psi, est.min_eigenvalue)
    };

    let mut sigma = &common + &psi;
    symmetrize(&mut sigma);
    Ok(CovarianceEstimate {
        method,
        sigma,
        psi,
        k: fit.k,
        hyperparameters: hyper,
        psi_min_eigenvalue: psi_min,
        assignment,
    })
}

/// All requested estimators on one shared factor fit.
pub struct Comparison {
    pub fit: FactorFit,
    pub estimates: Vec<(Method, Result<CovarianceEstimate>)>,
}

impl Comparison {
    pub fn get(&self, method: Method) -> Option<&CovarianceEstimate> {
        self.estimates.iter().find(|(m, _)| *m == method).and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn report(&self, panel: &ReturnPanel, seed: u64) -> Report {
        let mut report = Report::new(
            "estimate",
            RunMetadata {
                seed: Some(seed),
                n_assets: panel.n_assets(),
                n_periods: panel.n_periods(),
                ..Default::default()
            },
        );
        report.metadata.extra.insert("factors".into(), self.fit.summary());
        for (method, result) in &self.estimates {
            let mut entry = ReportEntry::new(*method);
            match result {
                Ok(est) => {
                    entry.hyperparameters = est.hyperparameters.clone();
                    entry.metrics.insert("k".into(), est.k as f64);
                    entry.metrics.insert("psi_min_eigenvalue".into(), est.psi_min_eigenvalue);
                    match est.min_eigenvalue() {
                        Ok(v) => {
                            entry.metrics.insert("min_eigenvalue".into(), v);
                        }
                        Err(e) => entry.error = Some(e.to_string()),
                    }
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            report.entries.push(entry);
        }
        report
    }
}

/// Runs every method in `methods` on one factor fit. Failures of individual
/// methods are kept in the result rather than aborting the others.
pub fn compare(
    panel: &ReturnPanel,
    methods: &[Method],
    config: &EstimatorConfig,
    classes: Option<&ClassificationMap>,
) -> Result<Comparison> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let fit = fit_factors(panel, &config.factor)?;
    let estimates = methods
        .par_iter()
        .map(|&m| (m, estimate_with_fit(panel, &fit, m, config, classes)))
        .collect();
    Ok(Comparison { fit, estimates })
}

use std::path::{Path, PathBuf};

use blockcov::estimator::{EstimatorConfig, Method};
use blockcov::evaluation::{BacktestConfig, StudyConfig, DEFAULT_ZERO_TOL};
use blockcov::simulation::SimulationSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run can be configured with. Every field has a default, so an
/// empty JSON object is a valid configuration; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Also used as the simulation and estimator seed.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Methods to run; each subcommand has its own default list.
    pub methods: Option<Vec<Method>>,
    pub estimator: EstimatorConfig,
    pub simulation: SimulationSpec,
    pub study: StudySettings,
    pub backtest: BacktestSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("blockcov-out"),
            methods: None,
            estimator: EstimatorConfig::default(),
            simulation: SimulationSpec::default(),
            study: StudySettings::default(),
            backtest: BacktestSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySettings {
    pub reference: Option<Method>,
    pub zero_tol: f64,
    pub fix_k_to_truth: bool,
    /// Dimensions for a sweep over `p`; a single study when absent.
    pub sweep: Option<Vec<usize>>,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self { reference: Some(Method::Csh), zero_tol: DEFAULT_ZERO_TOL, fix_k_to_truth: true, sweep: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSettings {
    pub train_len: usize,
    pub hold_len: usize,
    pub n_assets: usize,
    pub annualize: bool,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        let d = BacktestConfig::default();
        Self { train_len: d.train_len, hold_len: d.hold_len, n_assets: d.n_assets, annualize: d.annualize }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fills the seed into the simulation and estimator sections and expands
    /// the method list, so that the manifest records what actually ran.
    pub fn resolve(&mut self, default_methods: &[Method]) {
        if let Some(seed) = self.seed {
            self.simulation.seed = seed;
            self.estimator.seed = seed;
        }
        if self.methods.is_none() {
            self.methods = Some(default_methods.to_vec());
        }
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_default()
    }

    pub fn study_config(&self) -> StudyConfig {
        StudyConfig {
            methods: self.methods(),
            reference: self.study.reference,
            estimator: self.estimator.clone(),
            zero_tol: self.study.zero_tol,
            fix_k_to_truth: self.study.fix_k_to_truth,
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            methods: self.methods(),
            estimator: self.estimator.clone(),
            train_len: self.backtest.train_len,
            hold_len: self.backtest.hold_len,
            n_assets: self.backtest.n_assets,
            annualize: self.backtest.annualize,
        }
    }
}

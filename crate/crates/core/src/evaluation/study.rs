use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    classification_metrics, frobenius_error, gmv_weights, paired_sign_test, portfolio_risk, rand_index,
    sign_counts, summarize, support_labels, DEFAULT_ZERO_TOL,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_with_fit, EstimatorConfig, Method};
use crate::factor::{fit_factors, KPolicy};
use crate::report::{Observation, Report, RunMetadata, SignTestEntry};
use crate::seed::{derive_seed, rng_for};
use crate::simulation::{sample_panel, PopulationModel, SimulationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    F1,
    Accuracy,
    TpRate,
    TnRate,
    RandIndex,
    Frobenius,
    SigmaP,
}

impl Measure {
    pub const ALL: [Measure; 7] = [
        Measure::F1,
        Measure::Accuracy,
        Measure::TpRate,
        Measure::TnRate,
        Measure::RandIndex,
        Measure::Frobenius,
        Measure::SigmaP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::F1 => "f1",
            Measure::Accuracy => "accuracy",
            Measure::TpRate => "tp_rate",
            Measure::TnRate => "tn_rate",
            Measure::RandIndex => "rand_index",
            Measure::Frobenius => "frobenius",
            Measure::SigmaP => "sigma_p",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Measure::Frobenius | Measure::SigmaP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    /// Method compared against every other one in the sign tests.
    pub reference: Option<Method>,
    pub estimator: EstimatorConfig,
    pub zero_tol: f64,
    /// Use the simulated factor count instead of the configured policy.
    pub fix_k_to_truth: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Csh, Method::Csk, Method::Soft, Method::Al, Method::Scad],
            reference: Some(Method::Csh),
            estimator: EstimatorConfig::default(),
            zero_tol: DEFAULT_ZERO_TOL,
            fix_k_to_truth: true,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.methods.contains(&Method::Csi) {
            return Err(Error::Config("CSI needs a classification and cannot run on simulated data".into()));
        }
        if !(self.zero_tol >= 0.0) {
            return Err(Error::Config("zero tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    fn methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }
}

struct RepOutcome {
    observations: Vec<Observation>,
    oracle_sigma_p: Option<f64>,
    k: Option<usize>,
    log: Vec<String>,
}

fn run_rep(spec: &SimulationSpec, config: &StudyConfig, methods: &[Method], rep: usize) -> RepOutcome {
    let mut out = RepOutcome { observations: Vec::new(), oracle_sigma_p: None, k: None, log: Vec::new() };
    let prepared = (|| {
        let model = PopulationModel::generate(spec, rep)?;
        let panel = sample_panel(&model, spec.t, spec.df, &mut rng_for(spec.seed, &[rep as u64, 4]))?;
        let mut est_config = config.estimator.clone();
        est_config.seed = derive_seed(spec.seed, &[rep as u64, 5]);
        if config.fix_k_to_truth {
            est_config.factor.k_policy = KPolicy::Fixed { k: spec.k };
        }
        let fit = fit_factors(&panel, &est_config.factor)?;
        let oracle = portfolio_risk(&gmv_weights(&model.sigma)?, &model.sigma, false)?;
        Ok::<_, Error>((model, panel, est_config, fit, oracle))
    })();
    let (model, panel, est_config, fit, oracle) = match prepared {
        Ok(v) => v,
        Err(e) => {
            out.log.push(format!("rep {rep}: skipped: {e}"));
            return out;
        }
    };
    out.oracle_sigma_p = Some(oracle);
    out.k = Some(fit.k);
    let true_labels = model.labels.labels();
    for &method in methods {
        let scored = estimate_with_fit(&panel, &fit, method, &est_config, None).and_then(|est| {
            let cm = classification_metrics(&est.psi, &model.psi, config.zero_tol)?;
            let labels = est.assignment.clone().unwrap_or_else(|| support_labels(&est.psi, config.zero_tol));
            let ri = rand_index(labels.labels(), true_labels)?;
            let frob = frobenius_error(&est.sigma, &model.sigma)?;
            let risk = portfolio_risk(&gmv_weights(&est.sigma)?, &model.sigma, false)?;
            Ok([cm.f1, cm.accuracy, cm.tp_rate, cm.tn_rate, ri, frob, risk])
        });
        match scored {
            Ok(values) => out.observations.extend(Measure::ALL.iter().zip(values).map(|(m, value)| Observation {
                scope: "rep".into(),
                index: rep,
                method,
                measure: m.name().into(),
                value,
            })),
            Err(e) => out.log.push(format!("rep {rep}: {method} failed: {e}")),
        }
    }
    out
}

/// Monte Carlo comparison of estimators on simulated panels.
pub fn run_simulation_study(spec: &SimulationSpec, config: &StudyConfig) -> Result<Report> {
    spec.validate()?;
    config.validate()?;
    let methods = config.methods();
    let outcomes: Vec<RepOutcome> = (0..spec.reps).into_par_iter().map(|r| run_rep(spec, config, &methods, r)).collect();

    let mut report = Report::new(
        "simulation",
        RunMetadata { seed: Some(spec.seed), n_assets: spec.p, n_periods: spec.t, reps: Some(spec.reps), ..Default::default() },
    );
    let oracle: Vec<f64> = outcomes.iter().filter_map(|o| o.oracle_sigma_p).collect();
    let ks: Vec<usize> = outcomes.iter().filter_map(|o| o.k).collect();
    let skipped = outcomes.iter().filter(|o| o.oracle_sigma_p.is_none()).count();
    report.metadata.extra.insert("spec".into(), serde_json::to_value(spec)?);
    report.metadata.extra.insert("oracle_sigma_p".into(), json!(oracle));
    report.metadata.extra.insert("k".into(), json!(ks));
    report.metadata.extra.insert("skipped_reps".into(), json!(skipped));
    for o in outcomes {
        report.observations.extend(o.observations);
        report.log.extend(o.log);
    }
    report.entries = summarize(&methods, &report.observations);
    for entry in &mut report.entries {
        let failed = spec.reps - skipped
            - report.observations.iter().filter(|o| o.method == entry.method && o.measure == "f1").count();
        entry.metrics.insert("failed_reps".into(), failed as f64);
    }
    if let Some(reference) = config.reference.filter(|r| methods.contains(r)) {
        report.sign_tests = sign_tests(&report.observations, reference, &methods)?;
    }
    Ok(report)
}

fn sign_tests(observations: &[Observation], reference: Method, methods: &[Method]) -> Result<Vec<SignTestEntry>> {
    let mut table: BTreeMap<(Method, &str), BTreeMap<usize, f64>> = BTreeMap::new();
    for o in observations {
        table.entry((o.method, &o.measure)).or_default().insert(o.index, o.value);
    }
    let mut out = Vec::new();
    for &other in methods.iter().filter(|&&m| m != reference) {
        for measure in Measure::ALL {
            let (Some(a), Some(b)) = (table.get(&(reference, measure.name())), table.get(&(other, measure.name())))
            else {
                continue;
            };
            let (ra, rb): (Vec<f64>, Vec<f64>) =
                a.iter().filter_map(|(i, &x)| b.get(i).map(|&y| (x, y))).unzip();
            let (n_plus, n) = sign_counts(&ra, &rb, measure.higher_is_better());
            out.push(SignTestEntry {
                reference,
                benchmark: other,
                measure: measure.name().into(),
                n_plus,
                n,
                p_value: paired_sign_test(n_plus, n)?,
            });
        }
    }
    Ok(out)
}

/// Runs the study at each dimension in `dims` and reports the per-method mean
/// of every measure, one observation per (p, method, measure).
pub fn run_dimension_sweep(spec: &SimulationSpec, dims: &[usize], config: &StudyConfig) -> Result<Report> {
    if dims.is_empty() {
        return Err(Error::Config("dimension sweep needs at least one p".into()));
    }
    let mut report = Report::new(
        "sweep",
        RunMetadata { seed: Some(spec.seed), n_assets: *dims.iter().max().unwrap(), n_periods: spec.t, reps: Some(spec.reps), ..Default::default() },
    );
    report.metadata.extra.insert("dims".into(), json!(dims));
    for &p in dims {
        let mut s = spec.clone();
        s.p = p;
        let r = run_simulation_study(&s, config)?;
        for e in &r.entries {
            for measure in Measure::ALL {
                if let Some(&v) = e.metrics.get(measure.name()) {
                    report.observations.push(Observation {
                        scope: "p".into(),
                        index: p,
                        method: e.method,
                        measure: measure.name().into(),
                        value: v,
                    });
                }
            }
        }
        report.log.extend(r.log.into_iter().map(|l| format!("p = {p}: {l}")));
    }
    report.entries = summarize(&config.methods(), &report.observations);
    Ok(report)
}

//! `blockcov`: simulate, estimate and backtest covariance estimators from the
//! command line.

mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockcov::estimator::{compare, Method};
use blockcov::evaluation::{run_backtest, run_dimension_sweep, run_simulation_study};
use blockcov::factor::KPolicy;
use blockcov::panel::{load_classification, load_market_caps, load_returns};
use blockcov::report::read_report;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;
use output::OutputDir;

#[derive(Parser)]
#[command(name = "blockcov", version, about = "Block-diagonal factor-model covariance estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Comma-separated methods, e.g. CSH,CSK,SCAD.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo comparison on simulated panels.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        /// Sweep over p, as `lo:hi:step` or a comma-separated list.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Estimate covariance matrices from a returns file.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: PathBuf,
        /// `asset,code` classification, required for CSI.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fix the number of factors instead of selecting it.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Rolling minimum-variance backtest.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        returns: PathBuf,
        #[arg(long)]
        caps: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_len: Option<usize>,
        #[arg(long)]
        hold_len: Option<usize>,
        #[arg(long)]
        n_assets: Option<usize>,
    },
    /// Re-emit the CSV tables of a saved report and print its summary.
    Report {
        /// Report JSON written by another subcommand.
        input: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| format!("unknown method '{s}'"))
}

fn parse_sweep(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("sweep '{s}' is not `lo:hi:step` or a list of integers"));
    let dims: Vec<usize> = if s.contains(':') {
        let parts: Vec<usize> = s.split(':').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let [lo, hi, step] = parts[..] else { return Err(bad()) };
        if step == 0 || lo > hi {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if dims.is_empty() {
        return Err(bad());
    }
    Ok(dims)
}

fn prepare(common: &Common, seed: Option<u64>, defaults: &[Method]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(m) = &common.methods {
        cfg.methods = Some(m.clone());
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.resolve(defaults);
    Ok(cfg)
}

fn input(name: &str, path: &Path) -> (String, String) {
    (name.to_string(), path.display().to_string())
}

fn simulate(common: &Common, seed: u64, reps: Option<usize>, p: Option<usize>, t: Option<usize>, sweep: Option<&str>) -> Result<(), CliError> {
    let defaults = [Method::Csh, Method::Csk, Method::Soft, Method::Al, Method::Scad];
    let mut cfg = prepare(common, Some(seed), &defaults)?;
    if let Some(r) = reps {
        cfg.simulation.reps = r;
    }
    if let Some(p) = p {
        cfg.simulation.p = p;
    }
    if let Some(t) = t {
        cfg.simulation.t = t;
    }
    if let Some(s) = sweep {
        cfg.study.sweep = Some(parse_sweep(s)?);
    }
    cfg.simulation.validate()?;
    let study = cfg.study_config();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let report = match &cfg.study.sweep {
        Some(dims) => {
            let report = run_dimension_sweep(&cfg.simulation, dims, &study)?;
            out.sweep_table("figure_sigma_p.csv", &report, "sigma_p")?;
            report
        }
        None => {
            let report = run_simulation_study(&cfg.simulation, &study)?;
            out.sign_tests("sign_tests.csv", &report)?;
            report
        }
    };
    for line in &report.log {
        eprintln!("{line}");
    }
    out.report("report.json", &report)?;
    out.summary("summary.csv", &report)?;
    out.observations("observations.csv", &report)?;
    out.manifest("simulate", &[], &cfg)
}

fn estimate(common: &Common, returns: &Path, classes: Option<&Path>, seed: Option<u64>, k: Option<usize>) -> Result<(), CliError> {
    let mut cfg = prepare(common, seed, &[Method::Csh, Method::Csk])?;
    if let Some(k) = k {
        cfg.estimator.factor.k_policy = KPolicy::Fixed { k };
    }
    let methods = cfg.methods();
    if methods.contains(&Method::Csi) && classes.is_none() {
        return Err(CliError::Config("CSI needs a classification file (--classes)".into()));
    }
    let panel = load_returns(returns)?;
    let class_map = classes.map(load_classification).transpose()?;
    let comparison = compare(&panel, &methods, &cfg.estimator, class_map.as_ref())?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut first_error = None;
    for (method, result) in &comparison.estimates {
        match result {
            Ok(est) => out.matrix(&format!("sigma_{}.csv", method.name().to_lowercase()), panel.assets(), &est.sigma)?,
            Err(e) => {
                eprintln!("{method} failed: {e}");
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let report = comparison.report(&panel, cfg.estimator.seed);
    out.report("estimates.json", &report)?;
    out.summary("summary.csv", &report)?;
    let mut inputs = vec![input("returns", returns)];
    inputs.extend(classes.map(|c| input("classes", c)));
    out.manifest("estimate", &inputs, &cfg)?;
    match first_error {
        Some(e) => Err(blockcov::Error::Numerical(format!("at least one method failed: {e}")).into()),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn backtest(
    common: &Common,
    returns: &Path,
    caps: &Path,
    classes: &Path,
    seed: Option<u64>,
    train_len: Option<usize>,
    hold_len: Option<usize>,
    n_assets: Option<usize>,
) -> Result<(), CliError> {
    let defaults = [Method::Csh, Method::Csk, Method::Csi, Method::Soft, Method::Al, Method::Scad];
    let mut cfg = prepare(common, seed, &defaults)?;
    let b = &mut cfg.backtest;
    b.train_len = train_len.unwrap_or(b.train_len);
    b.hold_len = hold_len.unwrap_or(b.hold_len);
    b.n_assets = n_assets.unwrap_or(b.n_assets);
    let bt = cfg.backtest_config();
    bt.validate()?;
    let panel = load_returns(returns)?;
    let cap_panel = load_market_caps(caps)?;
    let class_map = load_classification(classes)?;
    let report = run_backtest(&panel, &cap_panel, &class_map, &bt)?;
    for line in &report.log {
        eprintln!("{line}");
    }
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.report("report.json", &report)?;
    out.summary("summary.csv", &report)?;
    out.observations("windows.csv", &report)?;
    let inputs = [input("returns", returns), input("caps", caps), input("classes", classes)];
    out.manifest("backtest", &inputs, &cfg)
}

fn report(input_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let report = read_report(input_path)?;
    report.validate()?;
    println!("{} report: {} assets, {} periods", report.kind, report.metadata.n_assets, report.metadata.n_periods);
    for e in &report.entries {
        let cells: Vec<String> = e
            .metrics
            .iter()
            .filter(|(k, _)| !k.ends_with("_n"))
            .map(|(k, v)| format!("{k}={v:.6}"))
            .collect();
        println!("{:<5} {}", e.method.name(), cells.join(" "));
    }
    if let Some(dir) = out {
        let mut o = OutputDir::create(dir)?;
        o.summary("summary.csv", &report)?;
        o.observations("observations.csv", &report)?;
        if !report.sign_tests.is_empty() {
            o.sign_tests("sign_tests.csv", &report)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { common, seed, reps, p, t, sweep } => {
            with_threads(common.threads, || simulate(common, *seed, *reps, *p, *t, sweep.as_deref()))
        }
        Command::Estimate { common, returns, classes, seed, k } => {
            with_threads(common.threads, || estimate(common, returns, classes.as_deref(), *seed, *k))
        }
        Command::Backtest { common, returns, caps, classes, seed, train_len, hold_len, n_assets } => {
            with_threads(common.threads, || backtest(common, returns, caps, classes, *seed, *train_len, *hold_len, *n_assets))
        }
        Command::Report { input, out } => report(input, out.as_deref()),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let Some(n) = threads else {
        return f();
    };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    pool.install(f)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

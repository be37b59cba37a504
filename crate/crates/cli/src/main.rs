//! `airisk`: fit copula portfolio models to daily PM2.5 data and compute
//! clean-air-at-risk reports and exceedance curves.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use airisk_core::calibration::{compute_log_ratios, fit_portfolio, simulate_concentrations, split_train_holdout, CityTerms};
use airisk_core::copula::{CityPortfolio, PortfolioModel};
use airisk_core::estimators::EstimatorKind;
use airisk_core::io::{self, sha256_hex};
use airisk_core::risk::{exceedance_curve, risk_report};
use airisk_core::statkit::StreamRng;
use airisk_core::{preset, Error};

#[derive(Parser, Debug)]
#[command(name = "airisk", version, about = "Portfolio PM2.5 pollution risk engine")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit GH marginals and a t-copula to a `day,city,pm25` CSV.
    Fit(FitArgs),
    /// Write synthetic daily concentrations drawn from a model.
    Simulate(SimulateArgs),
    /// CaR / CCaR report for a list of levels.
    Car(CarArgs),
    /// Exceedance probabilities over a threshold grid.
    Curve(CurveArgs),
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in portfolio (`paper`).
    #[arg(long)]
    preset: Option<String>,
    /// Fitted-model TOML file.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Portfolio weights in city order of first appearance (default equal).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Current concentration PM⁰, one value for all cities or one per city.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pm0: Vec<f64>,
    /// Log-ratio scaling factor applied to every city.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Fit on a random fraction of the day pairs only.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// Number of consecutive-day pairs to generate.
    #[arg(long, default_value_t = 365)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CarArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "sis")]
    estimator: EstimatorKind,
    /// Levels, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.01,0.005,0.002,0.001")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value = "sis")]
    estimator: EstimatorKind,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "100:700:20")]
    tau_grid: String,
    #[arg(long, default_value_t = 5000)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Data { .. } | Error::Io(_) => 2,
        Error::Domain { .. } | Error::Calibration(_) | Error::Convergence { .. } => 3,
    }
}

fn load(source: &Source) -> Result<(CityPortfolio, String), Error> {
    match (&source.preset, &source.model) {
        (Some(name), None) => {
            let p = preset::preset(name).ok_or_else(|| Error::Argument(format!("unknown preset '{name}'")))?;
            Ok((p, format!("preset {name}")))
        }
        (None, Some(path)) => Ok((io::read_model(path)?, format!("model {}", file_label(path)))),
        _ => Err(Error::Argument("give exactly one of --preset or --model".into())),
    }
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => io::write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Metadata lines: the settings that determine the artifact, and a hash of
/// them.
fn metadata(pairs: Vec<(&str, String)>) -> Vec<(String, String)> {
    let canon: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let mut meta: Vec<(String, String)> = vec![("tool".into(), format!("airisk {}", env!("CARGO_PKG_VERSION")))];
    meta.extend(pairs.into_iter().map(|(k, v)| (k.to_string(), v)));
    meta.push(("config_sha256".into(), sha256_hex(canon.as_bytes())));
    meta
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Argument(format!("cannot parse threshold grid '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| start + step * k as f64).collect());
    }
    spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn fit(a: &FitArgs) -> Result<(), Error> {
    let bytes = std::fs::read(&a.data).map_err(|e| Error::Io(format!("{}: {e}", a.data.display())))?;
    let series = io::parse_concentration_csv(bytes.as_slice(), &a.data.display().to_string())?;
    let mut panel = compute_log_ratios(&series)?;
    if let Some(f) = a.train_fraction {
        panel = split_train_holdout(&panel, f, &mut StreamRng::new(a.seed, 0))?.0;
    }
    let d = panel.dim();
    let weights = match &a.weights {
        Some(w) if w.len() == d => w.clone(),
        Some(w) => return Err(Error::Argument(format!("{} weights for {d} cities", w.len()))),
        None => vec![1.0 / d as f64; d],
    };
    let pm0 = match a.pm0.len() {
        1 => vec![a.pm0[0]; d],
        n if n == d => a.pm0.clone(),
        n => return Err(Error::Argument(format!("{n} PM0 values for {d} cities"))),
    };
    let terms: Vec<CityTerms> = (0..d)
        .map(|k| CityTerms {
            weight: weights[k],
            pm0: pm0[k],
            scale: a.scale,
        })
        .collect();
    let fitted = fit_portfolio(&panel, &terms).map_err(|e| match e {
        Error::Argument(m) => Error::Argument(format!("fit: {m}")),
        other => other,
    })?;
    let mut text = format!("# fitted by airisk {}\n# data_sha256: {}\n", env!("CARGO_PKG_VERSION"), sha256_hex(&bytes));
    text.push_str(&format!("# day_pairs: {}\n# complete_rows: {}\n", panel.len(), fitted.copula.rows));
    for (name, m) in panel.cities.iter().zip(&fitted.marginals) {
        text.push_str(&format!("# marginal {name}: n = {}, log-likelihood = {:.4}\n", m.n, m.log_likelihood));
        if let Some(w) = &m.warning {
            eprintln!("warning: {name}: {w}");
        }
    }
    text.push_str(&format!(
        "# copula log-likelihood: t = {:.4}, normal = {:.4}\n",
        fitted.copula.log_likelihood_t, fitted.copula.log_likelihood_normal
    ));
    for w in &fitted.copula.warnings {
        text.push_str(&format!("# warning: {w}\n"));
        eprintln!("warning: {w}");
    }
    text.push_str(&io::model_to_toml(&fitted.portfolio)?);
    emit(a.out.as_deref(), &text)
}

fn simulate(a: &SimulateArgs) -> Result<(), Error> {
    let (portfolio, _) = load(&a.source)?;
    let model = PortfolioModel::new(portfolio)?;
    let series = simulate_concentrations(&model, a.pairs, a.seed)?;
    emit(a.out.as_deref(), &io::concentration_csv(&series))
}

fn car(a: &CarArgs) -> Result<(), Error> {
    let (portfolio, label) = load(&a.source)?;
    let hash = io::model_hash(&portfolio)?;
    let model = PortfolioModel::new(portfolio)?;
    let report = risk_report(&model, &a.alpha, a.estimator, a.budget, a.seed, &hash)?;
    let alphas: Vec<String> = a.alpha.iter().map(f64::to_string).collect();
    let meta = metadata(vec![
        ("command", "car".into()),
        ("source", label),
        ("model_sha256", hash),
        ("estimator", a.estimator.to_string()),
        ("alpha", alphas.join(",")),
        ("budget", a.budget.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    emit(a.out.as_deref(), &io::report_csv(&report, &meta))
}

fn curve(a: &CurveArgs) -> Result<(), Error> {
    let (portfolio, label) = load(&a.source)?;
    let grid = parse_grid(&a.tau_grid)?;
    let hash = io::model_hash(&portfolio)?;
    let model = PortfolioModel::new(portfolio)?;
    let points = exceedance_curve(&model, &grid, a.estimator, a.budget, a.seed)?;
    let meta = metadata(vec![
        ("command", "curve".into()),
        ("source", label),
        ("model_sha256", hash),
        ("estimator", a.estimator.to_string()),
        ("tau_grid", a.tau_grid.clone()),
        ("budget", a.budget.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    emit(a.out.as_deref(), &io::curve_csv(&points, &meta))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Car(a) => car(a),
        Command::Curve(a) => curve(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Inference functions for margins: log-ratio extraction, GH marginal
//! maximum likelihood, then the copula on the resulting pseudo-observations.

use std::collections::{HashMap, HashSet};

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::copula::{cholesky_factor, simulate_log_ratios, City, CityPortfolio, CopulaFamily, CopulaSpec, PortfolioModel};
use crate::error::{Error, Result};
use crate::ghdist::{GhDistribution, GhMarginal, GhParams};
use crate::statkit::{bessel_k_scaled, normal_quantile, t_quantile, StreamRng};

/// Fewer samples than this fit, but with a warning.
pub const MIN_MARGINAL_SAMPLES: usize = 100;
pub const MIN_COPULA_ROWS: usize = 100;
const RESTART_ITERS: u64 = 300;
const POLISH_ITERS: u64 = 3000;
const NU_RANGE: (f64, f64) = (0.5, 200.0);
/// Smallest eigenvalue kept when projecting onto correlation matrices.
const EIGEN_FLOOR: f64 = 1e-6;
/// Pseudo-observations are kept this far inside (0, 1).
const U_CLAMP: f64 = 1e-12;

/// Daily concentrations of one city; `None` marks a missing day.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationSeries {
    pub city: String,
    pub days: Vec<u32>,
    pub values: Vec<Option<f64>>,
}

impl ConcentrationSeries {
    pub fn validate(&self) -> Result<()> {
        if self.days.len() != self.values.len() {
            return Err(Error::Argument(format!("series {} has {} days but {} values", self.city, self.days.len(), self.values.len())));
        }
        for w in self.days.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::data(
                    format!("city {} day {}", self.city, w[1]),
                    "day indices must be strictly increasing",
                ));
            }
        }
        for (day, v) in self.days.iter().zip(&self.values) {
            if let Some(v) = v {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::data(format!("city {} day {day}", self.city), format!("concentration {v} is not positive")));
                }
            }
        }
        Ok(())
    }
}

/// Why an entry of the log-ratio panel is or is not available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMask {
    Present,
    MissingStart,
    MissingEnd,
    MissingBoth,
}

/// Log-ratios `ln(PM_{t+1} / PM_t)` for every city and every start day `t`
/// in the observed range. Unavailable entries hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRatioPanel {
    pub cities: Vec<String>,
    pub days: Vec<u32>,
    pub ratios: Vec<Vec<f64>>,
    pub mask: Vec<Vec<PairMask>>,
}

impl LogRatioPanel {
    /// A panel of complete rows with start days `1..=n`.
    pub fn from_rows(cities: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != cities.len()) {
            return Err(Error::Argument(format!("row has {} entries for {} cities", r.len(), cities.len())));
        }
        Ok(Self {
            days: (1..=rows.len() as u32).collect(),
            mask: rows.iter().map(|r| vec![PairMask::Present; r.len()]).collect(),
            ratios: rows,
            cities,
        })
    }

    pub fn dim(&self) -> usize {
        self.cities.len()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn is_complete(&self, row: usize) -> bool {
        self.mask[row].iter().all(|&m| m == PairMask::Present)
    }

    /// Rows where every city has a ratio.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).filter(|&t| self.is_complete(t)).map(|t| self.ratios[t].clone()).collect()
    }

    /// All available ratios of city `d`.
    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.len())
            .filter(|&t| self.mask[t][d] == PairMask::Present)
            .map(|t| self.ratios[t][d])
            .collect()
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            cities: self.cities.clone(),
            days: rows.iter().map(|&t| self.days[t]).collect(),
            ratios: rows.iter().map(|&t| self.ratios[t].clone()).collect(),
            mask: rows.iter().map(|&t| self.mask[t].clone()).collect(),
        }
    }
}

/// One row per consecutive-day pair in the joint day range; a pair is
/// present for a city only if both days were observed.
pub fn compute_log_ratios(series: &[ConcentrationSeries]) -> Result<LogRatioPanel> {
    if series.is_empty() {
        return Err(Error::data("input", "no concentration series"));
    }
    let mut names = HashSet::new();
    for s in series {
        s.validate()?;
        if !names.insert(s.city.as_str()) {
            return Err(Error::data(format!("city {}", s.city), "city appears twice"));
        }
        if s.values.iter().flatten().count() < 2 {
            return Err(Error::data(format!("city {}", s.city), "need at least two observed days"));
        }
    }
    let first = series.iter().filter_map(|s| s.days.first()).min().copied().unwrap_or(0);
    let last = series.iter().filter_map(|s| s.days.last()).max().copied().unwrap_or(0);
    let lookup: Vec<HashMap<u32, f64>> = series
        .iter()
        .map(|s| s.days.iter().zip(&s.values).filter_map(|(&d, v)| v.map(|v| (d, v))).collect())
        .collect();
    let days: Vec<u32> = (first..last).collect();
    let mut ratios = Vec::with_capacity(days.len());
    let mut mask = Vec::with_capacity(days.len());
    for &t in &days {
        let mut r = Vec::with_capacity(series.len());
        let mut m = Vec::with_capacity(series.len());
        for obs in &lookup {
            let (a, b) = (obs.get(&t), obs.get(&(t + 1)));
            let (val, why) = match (a, b) {
                (Some(a), Some(b)) => ((b / a).ln(), PairMask::Present),
                (None, Some(_)) => (f64::NAN, PairMask::MissingStart),
                (Some(_), None) => (f64::NAN, PairMask::MissingEnd),
                (None, None) => (f64::NAN, PairMask::MissingBoth),
            };
            r.push(val);
            m.push(why);
        }
        ratios.push(r);
        mask.push(m);
    }
    Ok(LogRatioPanel {
        cities: series.iter().map(|s| s.city.clone()).collect(),
        days,
        ratios,
        mask,
    })
}

/// Consecutive-day pairs per block of simulated data; a missing day
/// separates blocks and each block restarts at the model's `PM⁰`.
pub const SIMULATED_BLOCK: usize = 364;

/// Daily concentrations whose log-ratios are `n_pairs` independent draws
/// from `model`. Restarting every block keeps the random walk of levels
/// within floating-point range; the missing day between blocks makes
/// [`compute_log_ratios`] drop exactly the two pairs that straddle it.
pub fn simulate_concentrations(model: &PortfolioModel, n_pairs: usize, seed: u64) -> Result<Vec<ConcentrationSeries>> {
    if n_pairs == 0 {
        return Err(Error::Argument("need at least one day pair".into()));
    }
    let rows = simulate_log_ratios(model, n_pairs, seed)?;
    let cities = &model.portfolio().cities;
    let mut out: Vec<ConcentrationSeries> = cities
        .iter()
        .map(|c| ConcentrationSeries {
            city: c.name.clone(),
            days: Vec::new(),
            values: Vec::new(),
        })
        .collect();
    let mut day = 1u32;
    for (b, block) in rows.chunks(SIMULATED_BLOCK).enumerate() {
        if b > 0 {
            for s in out.iter_mut() {
                s.days.push(day);
                s.values.push(None);
            }
            day += 1;
        }
        let mut level: Vec<f64> = cities.iter().map(|c| c.pm0).collect();
        for (d, s) in out.iter_mut().enumerate() {
            s.days.push(day);
            s.values.push(Some(level[d]));
        }
        for r in block {
            day += 1;
            for (d, s) in out.iter_mut().enumerate() {
                level[d] *= r[d].exp();
                s.days.push(day);
                s.values.push(Some(level[d]));
            }
        }
        day += 1;
    }
    Ok(out)
}

/// Pearson correlation of the log-ratio columns over complete rows.
pub fn empirical_correlation(panel: &LogRatioPanel) -> Result<Vec<Vec<f64>>> {
    let rows = panel.complete_rows();
    if rows.len() < 3 {
        return Err(Error::data("panel", format!("need at least 3 complete rows, found {}", rows.len())));
    }
    let d = panel.dim();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &rows {
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        if !(cov[i][i] > 0.0) {
            return Err(Error::data(format!("city {}", panel.cities[i]), "log-ratios have zero variance"));
        }
    }
    let mut out = vec![vec![1.0; d]; d];
    for i in 0..d {
        for j in 0..i {
            let c = (cov[i][j] / (cov[i][i] * cov[j][j]).sqrt()).clamp(-1.0, 1.0);
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    Ok(out)
}

/// Random split of the panel rows into `⌈fraction n⌉` training rows and the
/// rest, each kept in day order.
pub fn split_train_holdout(panel: &LogRatioPanel, fraction: f64, rng: &mut StreamRng) -> Result<(LogRatioPanel, LogRatioPanel)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("training fraction {fraction} outside (0, 1)")));
    }
    let n = panel.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((fraction * n as f64).ceil() as usize).min(n);
    let (train, hold) = idx.split_at_mut(n_train);
    train.sort_unstable();
    hold.sort_unstable();
    Ok((panel.select(train), panel.select(hold)))
}

/// GH log-likelihood of `samples`.
pub fn gh_log_likelihood(params: &GhParams, samples: &[f64]) -> Result<f64> {
    let g = GhDistribution::new(*params)?;
    Ok(samples.iter().map(|&x| g.ln_pdf(x)).sum())
}

#[derive(Clone, Debug, Serialize)]
pub struct GhFit {
    pub params: GhParams,
    pub log_likelihood: f64,
    pub n: usize,
    pub warning: Option<String>,
}

// unconstrained coordinates: (λ, ln(α - |β|), ln δ, β, μ)
fn to_params(x: &[f64]) -> Option<GhParams> {
    let (lambda, gap, delta, beta, mu) = (x[0], x[1].exp(), x[2].exp(), x[3], x[4]);
    let p = GhParams {
        lambda,
        alpha: gap + beta.abs(),
        delta,
        beta,
        mu,
    };
    p.validate().ok().map(|_| p)
}

fn from_params(p: &GhParams) -> Vec<f64> {
    vec![p.lambda, (p.alpha - p.beta.abs()).ln(), p.delta.ln(), p.beta, p.mu]
}

struct NegLogLik<'a> {
    samples: &'a [f64],
    symmetric: bool,
}

impl NegLogLik<'_> {
    fn expand(&self, x: &[f64]) -> Vec<f64> {
        if self.symmetric {
            vec![x[0], x[1], x[2], 0.0, x[3]]
        } else {
            x.to_vec()
        }
    }
}

impl CostFunction for NegLogLik<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let ll = to_params(&self.expand(x))
            .and_then(|p| gh_log_likelihood(&p, self.samples).ok())
            .filter(|v| v.is_finite());
        Ok(ll.map_or(f64::MAX, |v| -v))
    }
}

struct Simplex {
    best: Vec<f64>,
    cost: f64,
    iterations: u64,
    converged: bool,
}

fn nelder_mead(f: &NegLogLik, start: &[f64], step: f64, max_iters: u64) -> Result<Simplex> {
    let mut simplex = vec![start.to_vec()];
    for i in 0..start.len() {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .map_err(|e| Error::Calibration(e.to_string()))?;
    let res = Executor::new(NegLogLik { ..*f }, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| Error::Calibration(format!("simplex search failed: {e}")))?;
    let state = res.state();
    let converged = matches!(state.get_termination_status(), TerminationStatus::Terminated(TerminationReason::SolverConverged));
    Ok(Simplex {
        best: state.get_best_param().cloned().unwrap_or_else(|| start.to_vec()),
        cost: state.get_best_cost(),
        iterations: state.get_iter(),
        converged,
    })
}

/// Starting points on the standardized scale (mean 0, variance 1): a range
/// of `λ` with moderate tails, skew leaning toward the sample skewness.
fn starts(skew: f64, symmetric: bool) -> Result<Vec<Vec<f64>>> {
    let zeta: f64 = 1.5;
    [-0.5, 0.5, 1.5, -1.5, 3.0]
        .iter()
        .map(|&lambda: &f64| {
            let r = bessel_k_scaled(lambda + 1.0, zeta)? / bessel_k_scaled(lambda, zeta)?;
            let alpha = (zeta * r).sqrt();
            let delta = zeta / alpha;
            let beta = if symmetric { 0.0 } else { (0.2 * skew).clamp(-0.5, 0.5) * alpha };
            let gamma = (alpha * alpha - beta * beta).sqrt();
            let mu = -beta * delta / gamma * r;
            let p = GhParams {
                lambda,
                alpha,
                delta,
                beta,
                mu,
            };
            let x = from_params(&p);
            Ok(if symmetric { vec![x[0], x[1], x[2], x[4]] } else { x })
        })
        .collect()
}

fn fit_gh(samples: &[f64], symmetric: bool) -> Result<GhFit> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::data("marginal sample", format!("need at least 5 values to fit, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::data("marginal sample", "non-finite value"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    if !(var > 0.0) {
        return Err(Error::data("marginal sample", "values have zero variance"));
    }
    let sd = var.sqrt();
    let skew = samples.iter().map(|x| ((x - mean) / sd).powi(3)).sum::<f64>() / nf;
    let std: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    let f = NegLogLik {
        samples: &std,
        symmetric,
    };
    let candidates: Vec<Simplex> = starts(skew, symmetric)?
        .par_iter()
        .map(|s| nelder_mead(&f, s, 0.5, RESTART_ITERS))
        .collect::<Result<_>>()?;
    let mut best = candidates
        .into_iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or_else(|| Error::Calibration("no simplex restarts ran".into()))?;
    // polish, restarting the simplex until it stops improving
    let mut trace = vec![-best.cost];
    for _ in 0..4 {
        let next = nelder_mead(&f, &best.best, 0.1, POLISH_ITERS)?;
        let gain = best.cost - next.cost;
        if next.cost <= best.cost {
            best = next;
        }
        trace.push(-best.cost);
        if gain.abs() < 1e-7 && best.converged {
            break;
        }
    }
    let p = to_params(&f.expand(&best.best)).ok_or_else(|| Error::Calibration("simplex ended on invalid GH parameters".into()))?;
    // undo the standardization
    let params = GhParams {
        lambda: p.lambda,
        alpha: p.alpha / sd,
        delta: p.delta * sd,
        beta: p.beta / sd,
        mu: mean + sd * p.mu,
    };
    let log_likelihood = -best.cost - nf * sd.ln();
    if !best.converged || !log_likelihood.is_finite() {
        let mut t = vec![params.lambda, params.alpha, params.delta, params.beta, params.mu, log_likelihood];
        t.extend(trace.iter().rev().take(4));
        return Err(Error::Convergence {
            what: "GH maximum likelihood (trace: best lambda, alpha, delta, beta, mu, log-likelihood, recent objective)",
            iterations: best.iterations as usize,
            trace: t,
        });
    }
    let warning = (n < MIN_MARGINAL_SAMPLES).then(|| format!("only {n} samples for a five-parameter GH fit"));
    Ok(GhFit {
        params,
        log_likelihood,
        n,
        warning,
    })
}

/// GH maximum likelihood by simplex search from five starting points, the
/// best one polished to convergence.
pub fn fit_gh_marginal(samples: &[f64]) -> Result<GhFit> {
    fit_gh(samples, false)
}

/// As [`fit_gh_marginal`] with `β` held at zero.
pub fn fit_gh_symmetric(samples: &[f64]) -> Result<GhFit> {
    fit_gh(samples, true)
}

/// Normal maximum likelihood, for comparison with GH fits.
pub fn normal_log_likelihood(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
}

/// Kendall's tau-b of two columns.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (conc, disc, tx, ty) = (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| {
            let mut acc = (0i64, 0i64, 0i64, 0i64);
            for j in i + 1..n {
                let a = (x[i] - x[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
                let b = (y[i] - y[j]).partial_cmp(&0.0).map_or(0, |o| o as i64);
                match (a, b) {
                    (0, 0) => {}
                    (0, _) => acc.2 += 1,
                    (_, 0) => acc.3 += 1,
                    _ if a == b => acc.0 += 1,
                    _ => acc.1 += 1,
                }
            }
            acc
        })
        .reduce(|| (0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let (c, d) = (conc as f64, disc as f64);
    let denom = ((c + d + tx as f64) * (c + d + ty as f64)).sqrt();
    if denom > 0.0 {
        (c - d) / denom
    } else {
        0.0
    }
}

/// Nearest correlation matrix with eigenvalues at least `EIGEN_FLOOR`:
/// eigenvalue clipping followed by rescaling to a unit diagonal. Returns the
/// matrix and whether clipping was needed.
pub fn nearest_correlation(sigma: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, bool)> {
    let d = sigma.len();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (sigma[i][j] + sigma[j][i]));
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.iter().any(|&l| l < EIGEN_FLOOR);
    let lam = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&lam) * q.transpose();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = if i == j { 1.0 } else { r[(i, j)] / (r[(i, i)] * r[(j, j)]).sqrt() };
        }
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    cholesky_factor(&out).map_err(|e| Error::Calibration(format!("correlation matrix is not positive definite after projection: {e}")))?;
    Ok((out, clipped))
}

#[derive(Clone, Debug, Serialize)]
pub struct CopulaFit {
    pub spec: CopulaSpec,
    pub log_likelihood_t: f64,
    /// Normal copula with the same correlation matrix.
    pub log_likelihood_normal: f64,
    /// The Kendall-implied matrix had to be projected to stay positive
    /// definite (near-singular dependence).
    pub projected: bool,
    pub rows: usize,
    pub warnings: Vec<String>,
}

struct Gaussian {
    l: Vec<Vec<f64>>,
    ln_det: f64,
}

impl Gaussian {
    fn new(sigma: &[Vec<f64>]) -> Result<Self> {
        let f = cholesky_factor(sigma)?;
        let l = f.rows();
        let ln_det = 2.0 * (0..l.len()).map(|i| l[i][i].ln()).sum::<f64>();
        Ok(Self { l, ln_det })
    }

    /// `x' Σ⁻¹ x` by forward substitution.
    fn mahalanobis(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut y = vec![0.0; n];
        let mut q = 0.0;
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.l[i][j] * y[j]).sum();
            y[i] = (x[i] - s) / self.l[i][i];
            q += y[i] * y[i];
        }
        q
    }
}

fn t_copula_log_likelihood(g: &Gaussian, u: &[Vec<f64>], nu: f64) -> Result<f64> {
    use statrs::function::gamma::ln_gamma;
    let d = g.l.len() as f64;
    let c = ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu) - 0.5 * d * (nu * std::f64::consts::PI).ln() - 0.5 * g.ln_det;
    let c1 = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    let terms: Vec<f64> = u
        .par_iter()
        .with_min_len(256)
        .map(|row| {
            let x: Vec<f64> = row.iter().map(|&p| t_quantile(p, nu)).collect::<Result<_>>()?;
            let joint = c - 0.5 * (nu + d) * (g.mahalanobis(&x) / nu).ln_1p();
            let margins: f64 = x.iter().map(|xi| c1 - 0.5 * (nu + 1.0) * (xi * xi / nu).ln_1p()).sum();
            Ok(joint - margins)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

fn normal_copula_log_likelihood(g: &Gaussian, u: &[Vec<f64>]) -> Result<f64> {
    let terms: Vec<f64> = u
        .par_iter()
        .map(|row| {
            let x: Vec<f64> = row.iter().map(|&p| normal_quantile(p)).collect::<Result<_>>()?;
            let xx: f64 = x.iter().map(|v| v * v).sum();
            Ok(-0.5 * g.ln_det - 0.5 * (g.mahalanobis(&x) - xx))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Maximize the profile log-likelihood in `ν` on `(0.5, 200]`: a log-spaced
/// scan, then golden-section search around the best grid point.
fn profile_nu(g: &Gaussian, u: &[Vec<f64>]) -> Result<(f64, f64)> {
    let (lo, hi) = (NU_RANGE.0.ln(), NU_RANGE.1.ln());
    let k = 16;
    let grid: Vec<f64> = (1..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| t_copula_log_likelihood(g, u, s.exp())).collect::<Result<_>>()?;
    let i = (0..k).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    if i == k - 1 {
        return Ok((NU_RANGE.1, vals[i]));
    }
    let (mut a, mut b) = (if i == 0 { lo } else { grid[i - 1] }, grid[i + 1]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |s: f64| t_copula_log_likelihood(g, u, s.exp());
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > 2e-3 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2)?;
        }
    }
    let (s, v) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    if v >= vals[i] {
        Ok((s.exp(), v))
    } else {
        Ok((grid[i].exp(), vals[i]))
    }
}

/// t-copula on the pseudo-observations `u_d = F_d(r_d)` of the complete
/// rows: correlation from Kendall's tau, `Σ_ij = sin(π τ_ij / 2)`, projected
/// to the nearest positive-definite correlation matrix; `ν` by profile
/// likelihood.
pub fn fit_t_copula(panel: &LogRatioPanel, marginals: &[GhParams]) -> Result<CopulaFit> {
    let d = panel.dim();
    if marginals.len() != d {
        return Err(Error::Argument(format!("{} marginals for {d} cities", marginals.len())));
    }
    let rows = panel.complete_rows();
    if rows.len() < MIN_COPULA_ROWS {
        return Err(Error::data("panel", format!("need at least {MIN_COPULA_ROWS} complete rows, found {}", rows.len())));
    }
    if d == 1 {
        return Ok(CopulaFit {
            spec: CopulaSpec {
                family: CopulaFamily::Normal,
                nu: NU_RANGE.1,
                sigma: vec![vec![1.0]],
            },
            log_likelihood_t: 0.0,
            log_likelihood_normal: 0.0,
            projected: false,
            rows: rows.len(),
            warnings: vec!["single city: the copula is the identity".into()],
        });
    }
    let cdfs: Vec<GhMarginal> = marginals.par_iter().map(|p| GhMarginal::new(*p)).collect::<Result<_>>()?;
    let u: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|r| {
            r.iter()
                .zip(&cdfs)
                .map(|(&x, m)| Ok(m.cdf(x)?.clamp(U_CLAMP, 1.0 - U_CLAMP)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let cols: Vec<Vec<f64>> = (0..d).map(|j| u.iter().map(|r| r[j]).collect()).collect();
    let mut sigma = vec![vec![1.0; d]; d];
    for i in 0..d {
        for j in 0..i {
            let tau = kendall_tau(&cols[i], &cols[j]);
            let s = (0.5 * std::f64::consts::PI * tau).sin();
            sigma[i][j] = s;
            sigma[j][i] = s;
        }
    }
    let (sigma, projected) = nearest_correlation(&sigma)?;
    let mut warnings = Vec::new();
    if projected {
        warnings.push("Kendall correlation matrix was near-singular and has been projected".into());
    }
    let g = Gaussian::new(&sigma)?;
    let (nu, ll_t) = profile_nu(&g, &u)?;
    if nu >= NU_RANGE.1 {
        warnings.push(format!("degrees of freedom reached the upper bound {}", NU_RANGE.1));
    }
    let ll_n = normal_copula_log_likelihood(&g, &u)?;
    Ok(CopulaFit {
        spec: CopulaSpec {
            family: CopulaFamily::T,
            nu,
            sigma,
        },
        log_likelihood_t: ll_t,
        log_likelihood_normal: ll_n,
        projected,
        rows: rows.len(),
        warnings,
    })
}

/// Per-city settings the data cannot supply.
#[derive(Clone, Debug)]
pub struct CityTerms {
    pub weight: f64,
    pub pm0: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PortfolioFit {
    pub portfolio: CityPortfolio,
    pub marginals: Vec<GhFit>,
    pub copula: CopulaFit,
}

/// The full two-stage fit: each city's GH marginal from its own available
/// ratios, then the copula from the complete rows.
pub fn fit_portfolio(panel: &LogRatioPanel, terms: &[CityTerms]) -> Result<PortfolioFit> {
    if terms.len() != panel.dim() {
        return Err(Error::Argument(format!("{} city settings for {} cities", terms.len(), panel.dim())));
    }
    let marginals: Vec<GhFit> = (0..panel.dim())
        .map(|d| {
            fit_gh_marginal(&panel.column(d)).map_err(|e| match e {
                Error::Data { msg, .. } => Error::data(format!("city {}", panel.cities[d]), msg),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let params: Vec<GhParams> = marginals.iter().map(|m| m.params).collect();
    let copula = fit_t_copula(panel, &params)?;
    let cities = panel
        .cities
        .iter()
        .zip(terms)
        .zip(&params)
        .map(|((name, t), gh)| City {
            name: name.clone(),
            weight: t.weight,
            pm0: t.pm0,
            scale: t.scale,
            gh: *gh,
        })
        .collect();
    let portfolio = CityPortfolio {
        copula: copula.spec.clone(),
        cities,
    };
    portfolio.validate()?;
    Ok(PortfolioFit {
        portfolio,
        marginals,
        copula,
    })
}

//! Exceeding-probability and conditional-excess estimators: naive Monte
//! Carlo, importance sampling (IS) and stratified importance sampling (SIS).
//!
//! All three share one sampling kernel. Replication `k` of stratum `i` uses
//! its own random stream derived from `(seed, i, k)`, so a run is a pure
//! function of its inputs regardless of thread count or chunking, and
//! successive runs with the same seed use common random numbers.
//!
//! Naive sampling is IS with the identity tilt and a single stratum; IS is
//! SIS with a single stratum. Statistics always go through the stratified
//! summary, so the degenerate cases agree bit for bit.

mod strata;
mod tilt;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

pub use strata::{
    aoa_allocate, simulate_mixture, simulate_sis, sis_estimate, stratified_sample, MixtureComponent, StratificationScheme,
    DEFAULT_MIN_PER_STRATUM, DEFAULT_STRATA,
};
pub use tilt::{calibrate_is, growth_direction, likelihood_ratio, IsCalibration, IsParams};

use crate::copula::{CopulaDraw, CopulaFamily, PortfolioModel};
use crate::error::{Error, Result};
use crate::statkit::{gamma_quantile_from_score, normal_quantile, StreamRng};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Naive,
    Is,
    Sis,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Is => "is",
            EstimatorKind::Sis => "sis",
        })
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "is" => Ok(Self::Is),
            "sis" => Ok(Self::Sis),
            _ => Err(Error::Argument(format!("unknown estimator '{s}' (expected naive, is or sis)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateResult {
    /// NaN when `empty_tail` is set on a conditional estimate.
    pub estimate: f64,
    /// Per-replication variance: `halfwidth95 = 1.96 sqrt(variance / n)`.
    pub variance: f64,
    pub halfwidth95: f64,
    pub n: usize,
    pub estimator: EstimatorKind,
    /// No replication exceeded the threshold.
    pub empty_tail: bool,
}

impl EstimateResult {
    fn new(estimate: f64, var_of_estimate: f64, n: usize, estimator: EstimatorKind, empty_tail: bool) -> Self {
        let variance = var_of_estimate.max(0.0) * n as f64;
        Self {
            estimate,
            variance,
            halfwidth95: Z95 * (variance / n as f64).sqrt(),
            n,
            estimator,
            empty_tail,
        }
    }

    /// Half-width as a percentage of the estimate.
    pub fn relative_halfwidth_pct(&self) -> f64 {
        100.0 * self.halfwidth95 / self.estimate
    }
}

/// Simulated concentrations and likelihood ratios of one stratum.
#[derive(Clone, Debug, Default)]
pub struct StratumSample {
    pub prob: f64,
    pub c: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Moments {
    n: usize,
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov_ab: f64,
}

impl StratumSample {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    // A = C 1{C>τ} W, B = 1{C>τ} W
    fn moments(&self, tau: f64) -> Moments {
        let n = self.c.len();
        let term = |k: usize| -> (f64, f64) {
            if self.c[k] > tau {
                (self.c[k] * self.w[k], self.w[k])
            } else {
                (0.0, 0.0)
            }
        };
        let (mut sa, mut sb) = (0.0, 0.0);
        for k in 0..n {
            let (a, b) = term(k);
            sa += a;
            sb += b;
        }
        let nf = n as f64;
        let (ma, mb) = (sa / nf, sb / nf);
        let (mut qa, mut qb, mut qab) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let (a, b) = term(k);
            let (da, db) = (a - ma, b - mb);
            qa += da * da;
            qb += db * db;
            qab += da * db;
        }
        let dof = (nf - 1.0).max(1.0);
        Moments {
            n,
            mean_a: ma,
            mean_b: mb,
            var_a: qa / dof,
            var_b: qb / dof,
            cov_ab: qab / dof,
        }
    }
}

/// The output of one simulation run: per-stratum samples with their
/// probabilities (a single stratum of probability 1 when unstratified).
#[derive(Clone, Debug)]
pub struct WeightedSample {
    pub estimator: EstimatorKind,
    pub strata: Vec<StratumSample>,
}

impl WeightedSample {
    pub fn n(&self) -> usize {
        self.strata.iter().map(StratumSample::len).sum()
    }

    /// `(EP, CE)` at threshold `tau`.
    pub fn estimate(&self, tau: f64) -> (EstimateResult, EstimateResult) {
        let n = self.n();
        let m: Vec<Moments> = self.strata.iter().map(|s| s.moments(tau)).collect();
        let mut ep = 0.0;
        let mut num = 0.0;
        let mut ep_var = 0.0;
        for (s, mi) in self.strata.iter().zip(&m) {
            ep += s.prob * mi.mean_b;
            num += s.prob * mi.mean_a;
            ep_var += s.prob * s.prob * mi.var_b / mi.n as f64;
        }
        let empty = self.strata.iter().zip(&m).all(|(s, mi)| mi.mean_b == 0.0 || s.prob == 0.0);
        let ep_res = EstimateResult::new(ep, ep_var, n, self.estimator, empty);
        if empty {
            return (ep_res, EstimateResult::new(f64::NAN, 0.0, n, self.estimator, true));
        }
        let ce = num / ep;
        // delta method for the ratio of stratified means
        let mut ce_var = 0.0;
        for (s, mi) in self.strata.iter().zip(&m) {
            let r = mi.var_a - 2.0 * ce * mi.cov_ab + ce * ce * mi.var_b;
            ce_var += s.prob * s.prob * r / mi.n as f64;
        }
        ce_var /= ep * ep;
        (ep_res, EstimateResult::new(ce, ce_var, n, self.estimator, false))
    }

    /// Smallest sampled level `t` whose estimated exceedance mass is at most
    /// `alpha`. `None` if the sample holds no such level.
    pub fn tail_quantile(&self, alpha: f64) -> Option<f64> {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(self.n());
        for s in &self.strata {
            let scale = s.prob / s.len() as f64;
            pts.extend(s.c.iter().zip(&s.w).map(|(&c, &w)| (c, scale * w)));
        }
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut cum = 0.0;
        let mut k = 0;
        while k < pts.len() {
            let level = pts[k].0;
            let mut j = k;
            let mut mass = 0.0;
            while j < pts.len() && pts[j].0 == level {
                mass += pts[j].1;
                j += 1;
            }
            if cum + mass > alpha {
                return Some(level);
            }
            cum += mass;
            k = j;
        }
        pts.last().map(|p| p.0)
    }

    /// Per-stratum spreads for allocation: the standard deviation of the
    /// CE influence term relative to CE, combined with the EP indicator
    /// term relative to EP, so that AOA minimizes the sum of the two
    /// relative variances. Only the EP term is used when no tail mass was
    /// seen.
    fn stratum_spread(&self, tau: f64) -> Vec<f64> {
        let m: Vec<Moments> = self.strata.iter().map(|s| s.moments(tau)).collect();
        let (ep, ce) = self.estimate(tau);
        if !ce.empty_tail && ep.estimate > 0.0 {
            let ce = ce.estimate;
            let s: Vec<f64> = m
                .iter()
                .map(|mi| {
                    let r = (mi.var_a - 2.0 * ce * mi.cov_ab + ce * ce * mi.var_b).max(0.0);
                    (r / (ce * ce) + mi.var_b.max(0.0)).sqrt()
                })
                .collect();
            if s.iter().any(|&v| v > 0.0) {
                return s;
            }
        }
        m.iter().map(|mi| mi.var_b.max(0.0).sqrt()).collect()
    }
}

/// Draws `(Z, Y)` from the tilted density restricted to a stratum and maps
/// them to concentrations.
///
/// `Y` is generated from a normal score `η` through the tilted gamma
/// quantile, so `(Z - μ, η)` is standard normal in `D + 1` dimensions (`D`
/// for the normal family) and strata are slabs along a direction there.
pub(crate) struct Sampler<'a> {
    model: &'a PortfolioModel,
    tilt: &'a IsParams,
    scheme: &'a StratificationScheme,
    nu: Option<f64>,
    cum_probs: Vec<f64>,
    /// `(share, tilt)` of every component when draws come from a mixture of
    /// tilted densities; the weight is then original over mixture density.
    mixture: Option<&'a [(f64, IsParams)]>,
}

pub(crate) struct Scratch {
    eps: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            eps: vec![0.0; d + 1],
            z: vec![0.0; d],
            v: vec![0.0; d],
        }
    }
}

/// Length of a stratification direction: one coordinate per city plus one
/// for the mixing variable of the t family.
pub fn sampling_dim(model: &PortfolioModel) -> usize {
    match model.family() {
        CopulaFamily::T => model.dim() + 1,
        CopulaFamily::Normal => model.dim(),
    }
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(model: &'a PortfolioModel, tilt: &'a IsParams, scheme: &'a StratificationScheme) -> Result<Self> {
        let d = model.dim();
        if tilt.shift.len() != d {
            return Err(Error::Argument(format!("IS shift has {} entries, expected {d}", tilt.shift.len())));
        }
        if scheme.direction.len() != sampling_dim(model) {
            return Err(Error::Argument(format!(
                "stratification direction has {} entries, expected {}",
                scheme.direction.len(),
                sampling_dim(model)
            )));
        }
        tilt.validate()?;
        scheme.validate()?;
        let nu = match model.family() {
            CopulaFamily::T => Some(model.nu()),
            CopulaFamily::Normal => None,
        };
        let mut acc = 0.0;
        let cum_probs = scheme
            .probs
            .iter()
            .map(|p| {
                let lo = acc;
                acc += p;
                lo
            })
            .collect();
        Ok(Self {
            model,
            tilt,
            scheme,
            nu,
            cum_probs,
            mixture: None,
        })
    }

    pub(crate) fn with_mixture(mut self, mixture: &'a [(f64, IsParams)]) -> Self {
        self.mixture = Some(mixture);
        self
    }

    /// Fill `s.z` and return `Y`: the standard normal vector `e = (ε, η)` has
    /// its component along the direction replaced by the stratified `ξ`.
    fn draw(&self, stratum: usize, rng: &mut StreamRng, s: &mut Scratch) -> Result<Option<f64>> {
        let u = rng.open01();
        let p = self.cum_probs[stratum] + u * self.scheme.probs[stratum];
        let xi = normal_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))?;
        let dir = &self.scheme.direction;
        let e = &mut s.eps[..dir.len()];
        for x in e.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let proj: f64 = dir.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
        for (x, a) in e.iter_mut().zip(dir) {
            *x += (xi - proj) * a;
        }
        for (d, z) in s.z.iter_mut().enumerate() {
            *z = self.tilt.shift[d] + e[d];
        }
        match self.nu {
            Some(nu) => Ok(Some(gamma_quantile_from_score(e[s.z.len()], 0.5 * nu, self.tilt.theta)?)),
            None => Ok(None),
        }
    }

    fn weight(&self, z: &[f64], y: Option<f64>) -> f64 {
        match self.mixture {
            None => tilt::ln_likelihood_ratio(self.tilt, self.nu, z, y).exp(),
            Some(mix) => {
                // 1 / sum_k share_k / W_k, in log space
                let terms: Vec<f64> = mix
                    .iter()
                    .map(|(share, t)| share.ln() - tilt::ln_likelihood_ratio(t, self.nu, z, y))
                    .collect();
                let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
                (-(top + sum.ln())).exp()
            }
        }
    }

    pub(crate) fn draw_copula(&self, stratum: usize, rng: &mut StreamRng) -> Result<CopulaDraw> {
        let mut s = Scratch::new(self.model.dim());
        let y = self.draw(stratum, rng, &mut s)?;
        self.model.dependent(&s.z, y, &mut s.v);
        Ok(CopulaDraw { z: s.z, y, v: s.v })
    }

    fn replicate(&self, stratum: usize, rng: &mut StreamRng, s: &mut Scratch) -> Result<(f64, f64)> {
        let y = self.draw(stratum, rng, s)?;
        self.model.dependent(&s.z, y, &mut s.v);
        let c = self.model.concentration_of(&s.v)?;
        Ok((c, self.weight(&s.z, y)))
    }

    /// Replications `range` of `stratum`, appended to `out`.
    pub(crate) fn run(&self, stratum: usize, range: std::ops::Range<usize>, base: &StreamRng, out: &mut StratumSample) -> Result<()> {
        let srng = base.fork(stratum as u64);
        let d = self.model.dim();
        let res: Vec<(f64, f64)> = range
            .into_par_iter()
            .with_min_len(256)
            .map_init(|| Scratch::new(d), |s, k| self.replicate(stratum, &mut srng.fork(k as u64), s))
            .collect::<Result<_>>()?;
        out.c.extend(res.iter().map(|r| r.0));
        out.w.extend(res.iter().map(|r| r.1));
        Ok(())
    }
}

fn check_run(tau: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 replications, got {n}")));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Argument(format!("threshold {tau} must be finite and nonnegative")));
    }
    Ok(())
}

fn simulate_single(
    model: &PortfolioModel,
    tilt: &IsParams,
    n: usize,
    rng: &StreamRng,
    estimator: EstimatorKind,
) -> Result<WeightedSample> {
    let scheme = StratificationScheme::equiprobable(tilt.direction(model)?, 1)?;
    let sampler = Sampler::new(model, tilt, &scheme)?;
    let mut s = StratumSample {
        prob: 1.0,
        ..Default::default()
    };
    sampler.run(0, 0..n, rng, &mut s)?;
    Ok(WeightedSample {
        estimator,
        strata: vec![s],
    })
}

/// `n` plain replications (identity tilt).
pub fn simulate_naive(model: &PortfolioModel, n: usize, rng: &StreamRng) -> Result<WeightedSample> {
    simulate_single(model, &IsParams::identity(model.dim()), n, rng, EstimatorKind::Naive)
}

/// `n` replications under the tilted density.
pub fn simulate_is(model: &PortfolioModel, tilt: &IsParams, n: usize, rng: &StreamRng) -> Result<WeightedSample> {
    simulate_single(model, tilt, n, rng, EstimatorKind::Is)
}

/// Naive Monte Carlo `(EP, CE)` at `tau`.
pub fn naive_estimate(model: &PortfolioModel, tau: f64, n: usize, rng: &StreamRng) -> Result<(EstimateResult, EstimateResult)> {
    check_run(tau, n)?;
    Ok(simulate_naive(model, n, rng)?.estimate(tau))
}

/// Importance-sampling `(EP, CE)` at `tau`.
pub fn is_estimate(
    model: &PortfolioModel,
    tau: f64,
    tilt: &IsParams,
    n: usize,
    rng: &StreamRng,
) -> Result<(EstimateResult, EstimateResult)> {
    check_run(tau, n)?;
    Ok(simulate_is(model, tilt, n, rng)?.estimate(tau))
}

//! Stratification of the tilted density along one direction in `Z`-space,
//! with adaptive optimal allocation (AOA) across stages.

use super::{check_run, EstimateResult, EstimatorKind, IsParams, Sampler, StratumSample, WeightedSample};
use crate::copula::{CopulaDraw, PortfolioModel};
use crate::error::{Error, Result};
use crate::statkit::StreamRng;

pub const DEFAULT_STRATA: usize = 22;
pub const DEFAULT_MIN_PER_STRATUM: usize = 10;
const STAGE_SHARES: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Strata are slabs `{ v'(Z - μ) ∈ (Φ⁻¹(P_{i-1}), Φ⁻¹(P_i)] }` where `P_i` are
/// the cumulative stratum probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct StratificationScheme {
    pub direction: Vec<f64>,
    pub probs: Vec<f64>,
}

impl StratificationScheme {
    pub fn equiprobable(direction: Vec<f64>, strata: usize) -> Result<Self> {
        if strata == 0 {
            return Err(Error::Argument("need at least one stratum".into()));
        }
        let s = Self {
            direction,
            probs: vec![1.0 / strata as f64; strata],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn strata(&self) -> usize {
        self.probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() < 1e-9) {
            return Err(Error::Argument(format!("stratification direction has norm {norm}, expected 1")));
        }
        if self.probs.is_empty() || self.probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Argument("stratum probabilities must be positive".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Argument(format!("stratum probabilities sum to {total}")));
        }
        Ok(())
    }
}

/// One draw from the tilted density conditioned on stratum `stratum`
/// (zero-based).
pub fn stratified_sample(
    model: &PortfolioModel,
    scheme: &StratificationScheme,
    stratum: usize,
    tilt: &IsParams,
    rng: &mut StreamRng,
) -> Result<CopulaDraw> {
    if stratum >= scheme.strata() {
        return Err(Error::Argument(format!("stratum {stratum} out of range for {} strata", scheme.strata())));
    }
    Sampler::new(model, tilt, scheme)?.draw_copula(stratum, rng)
}

/// Split `budget` replications in proportion to `probs[i] * spread[i]`, with
/// at least `n_min` per stratum, rounding by largest remainder so the counts
/// sum exactly to `budget`.
pub fn aoa_allocate(budget: usize, probs: &[f64], spread: &[f64], n_min: usize) -> Result<Vec<usize>> {
    let k = probs.len();
    if k == 0 || spread.len() != k {
        return Err(Error::Argument("probabilities and spreads must be nonempty and of equal length".into()));
    }
    if budget < k * n_min {
        return Err(Error::Argument(format!("budget {budget} cannot give {n_min} replications to each of {k} strata")));
    }
    if probs.iter().chain(spread).any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Argument("probabilities and spreads must be finite and nonnegative".into()));
    }
    let mut score: Vec<f64> = probs.iter().zip(spread).map(|(p, s)| p * s).collect();
    if score.iter().all(|&s| s == 0.0) {
        score = probs.to_vec();
    }
    let mut floored = vec![false; k];
    let mut ideal = vec![0.0; k];
    loop {
        let fixed = floored.iter().filter(|&&f| f).count();
        let free_budget = (budget - fixed * n_min) as f64;
        let total: f64 = (0..k).filter(|&i| !floored[i]).map(|i| score[i]).sum();
        let mut changed = false;
        for i in 0..k {
            if floored[i] {
                ideal[i] = n_min as f64;
                continue;
            }
            ideal[i] = if total > 0.0 { free_budget * score[i] / total } else { 0.0 };
            if ideal[i] < n_min as f64 {
                floored[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if floored.iter().all(|&f| f) {
            ideal.iter_mut().for_each(|x| *x = n_min as f64);
            break;
        }
    }
    let mut alloc: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..k).filter(|&i| !floored[i]).collect();
    if order.is_empty() {
        order = (0..k).collect();
    }
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(score[b].total_cmp(&score[a])).then(a.cmp(&b))
    });
    for j in 0..budget - assigned {
        alloc[order[j % order.len()]] += 1;
    }
    Ok(alloc)
}

fn stage_budgets(total: usize, strata: usize, n_min: usize) -> Result<Vec<usize>> {
    let floor = strata * n_min;
    if total < floor * STAGE_SHARES.len() {
        return Err(Error::Argument(format!(
            "SIS budget {total} is below {} ({} strata x {n_min} x {} stages)",
            floor * STAGE_SHARES.len(),
            strata,
            STAGE_SHARES.len()
        )));
    }
    let mut out = Vec::with_capacity(STAGE_SHARES.len());
    let mut used = 0;
    for (s, share) in STAGE_SHARES[..STAGE_SHARES.len() - 1].iter().enumerate() {
        // keep the floor of every later stage in reserve
        let reserve = floor * (STAGE_SHARES.len() - 1 - s);
        let n = ((share * total as f64).round() as usize).max(floor).min(total - used - reserve);
        out.push(n);
        used += n;
    }
    let last = total.checked_sub(used).filter(|&r| r >= floor).ok_or_else(|| {
        Error::Argument(format!("SIS budget {total} too small for the final stage"))
    })?;
    out.push(last);
    Ok(out)
}

/// One stratified sampler inside a staged run, with the threshold that
/// steers its allocation.
struct Stage<'a> {
    sampler: Sampler<'a>,
    base: StreamRng,
    steer: f64,
    share: f64,
    probs: &'a [f64],
}

/// Runs the stage schedule over the strata of all components: the first
/// stage allocates proportionally, later ones by AOA on the spreads seen so
/// far. With `adaptive` unset the whole budget goes out proportionally.
fn run_staged(parts: &[Stage], total_n: usize, n_min: usize, adaptive: bool, estimator: EstimatorKind) -> Result<WeightedSample> {
    let mut sample = WeightedSample {
        estimator,
        strata: parts
            .iter()
            .flat_map(|p| {
                p.probs.iter().map(move |&q| StratumSample {
                    prob: p.share * q,
                    ..Default::default()
                })
            })
            .collect(),
    };
    let k = sample.strata.len();
    let probs: Vec<f64> = sample.strata.iter().map(|s| s.prob).collect();
    let budgets = if adaptive { stage_budgets(total_n, k, n_min)? } else { vec![total_n] };
    for (stage, budget) in budgets.into_iter().enumerate() {
        let spread = if stage == 0 {
            vec![1.0; k]
        } else {
            let mut spread = Vec::with_capacity(k);
            let mut offset = 0;
            for p in parts {
                let all = sample.stratum_spread(p.steer);
                spread.extend_from_slice(&all[offset..offset + p.probs.len()]);
                offset += p.probs.len();
            }
            spread
        };
        let alloc = aoa_allocate(budget, &probs, &spread, if adaptive { n_min } else { 0 })?;
        let mut idx = 0;
        for p in parts {
            for i in 0..p.probs.len() {
                let target = &mut sample.strata[idx];
                let done = target.len();
                p.sampler.run(i, done..done + alloc[idx], &p.base, target)?;
                idx += 1;
            }
        }
    }
    if let Some(s) = sample.strata.iter().find(|s| s.len() < 2) {
        return Err(Error::Argument(format!(
            "budget {total_n} leaves a stratum of probability {} with {} replications",
            s.prob,
            s.len()
        )));
    }
    Ok(sample)
}

/// Four-stage SIS run at threshold `tau` (which steers the allocation).
pub fn simulate_sis(
    model: &PortfolioModel,
    tau: f64,
    tilt: &IsParams,
    scheme: &StratificationScheme,
    total_n: usize,
    n_min: usize,
    rng: &StreamRng,
) -> Result<WeightedSample> {
    check_run(tau, total_n)?;
    let part = Stage {
        sampler: Sampler::new(model, tilt, scheme)?,
        base: rng.clone(),
        steer: tau,
        share: 1.0,
        probs: &scheme.probs,
    };
    run_staged(&[part], total_n, n_min, true, EstimatorKind::Sis)
}

/// A tilted density in a defensive mixture, stratified along its own
/// scheme; `steer` is the threshold its allocation targets.
#[derive(Clone, Debug)]
pub struct MixtureComponent {
    pub share: f64,
    pub steer: f64,
    pub tilt: IsParams,
    pub scheme: StratificationScheme,
}

/// Draws from `Σ share_k q_k`, each component stratified on its own, and
/// weights every replication by the original over the mixture density. One
/// sample serves all thresholds, so estimated exceedance is monotone.
///
/// The run is staged with AOA when any component has more than one stratum
/// (labelled SIS), and proportional otherwise (labelled IS).
pub fn simulate_mixture(
    model: &PortfolioModel,
    components: &[MixtureComponent],
    total_n: usize,
    n_min: usize,
    rng: &StreamRng,
) -> Result<WeightedSample> {
    if components.is_empty() {
        return Err(Error::Argument("mixture needs at least one component".into()));
    }
    let total: f64 = components.iter().map(|c| c.share).sum();
    if components.iter().any(|c| !(c.share > 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("mixture shares must be positive and sum to 1, got {total}")));
    }
    check_run(0.0, total_n)?;
    let mix: Vec<(f64, IsParams)> = components.iter().map(|c| (c.share, c.tilt.clone())).collect();
    let parts = components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            Ok(Stage {
                sampler: Sampler::new(model, &c.tilt, &c.scheme)?.with_mixture(&mix),
                base: rng.fork(k as u64),
                steer: c.steer,
                share: c.share,
                probs: &c.scheme.probs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let adaptive = components.iter().any(|c| c.scheme.strata() > 1);
    let kind = if adaptive { EstimatorKind::Sis } else { EstimatorKind::Is };
    run_staged(&parts, total_n, n_min, adaptive, kind)
}

/// Stratified IS `(EP, CE)` at `tau` with the default per-stratum floor.
pub fn sis_estimate(
    model: &PortfolioModel,
    tau: f64,
    tilt: &IsParams,
    scheme: &StratificationScheme,
    total_n: usize,
    rng: &StreamRng,
) -> Result<(EstimateResult, EstimateResult)> {
    Ok(simulate_sis(model, tau, tilt, scheme, total_n, DEFAULT_MIN_PER_STRATUM, rng)?.estimate(tau))
}

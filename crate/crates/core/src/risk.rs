//! Risk measures on the portfolio concentration: CaR (the level exceeded
//! with probability `α`), CCaR (the mean concentration beyond it),
//! exceedance curves and variance-reduction factors.

use serde::Serialize;

use crate::copula::PortfolioModel;
use crate::error::{Error, Result};
use crate::estimators::{
    calibrate_is, simulate_mixture, simulate_naive, simulate_sis, EstimateResult, EstimatorKind, IsCalibration,
    IsParams, MixtureComponent, StratificationScheme, WeightedSample, DEFAULT_MIN_PER_STRATUM, DEFAULT_STRATA,
};
use crate::statkit::StreamRng;

pub const MIN_BUDGET: usize = 1000;
/// Relative change in CaR between recalibrations that ends the search.
pub const CAR_TOLERANCE: f64 = 1e-3;
pub const CAR_MAX_ITER: usize = 8;
/// Tilted components in the exceedance-curve mixture, besides the
/// untilted one.
pub const CURVE_TILTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskQuery {
    pub alpha: f64,
    pub estimator: EstimatorKind,
    pub budget: usize,
    pub seed: u64,
}

impl RiskQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Argument(format!("alpha {} outside (0, 0.5)", self.alpha)));
        }
        if self.budget < MIN_BUDGET {
            return Err(Error::Argument(format!("budget {} below the minimum {MIN_BUDGET}", self.budget)));
        }
        Ok(())
    }

    fn rng(&self) -> StreamRng {
        StreamRng::new(self.seed, 0)
    }
}

/// A simulation at one threshold together with the tilt it used.
pub struct Run {
    pub sample: WeightedSample,
    pub calibration: Option<IsCalibration>,
}

/// Simulate `budget` replications with `estimator`, tilting toward `tau`.
/// At or below the baseline concentration IS and SIS use the identity tilt.
pub fn simulate_at(model: &PortfolioModel, estimator: EstimatorKind, tau: f64, budget: usize, rng: &StreamRng) -> Result<Run> {
    if estimator == EstimatorKind::Naive {
        return Ok(Run {
            sample: simulate_naive(model, budget, rng)?,
            calibration: None,
        });
    }
    let (tilt, scheme_dir, calibration) = if tau > model.baseline() {
        let cal = calibrate_is(model, tau)?;
        (cal.params.clone(), cal.boundary_normal.clone(), Some(cal))
    } else {
        let t = IsParams::identity(model.dim());
        let dir = t.direction(model)?;
        (t, dir, None)
    };
    let sample = match estimator {
        EstimatorKind::Is => crate::estimators::simulate_is(model, &tilt, budget, rng)?,
        _ => {
            let scheme = StratificationScheme::equiprobable(scheme_dir, DEFAULT_STRATA)?;
            simulate_sis(model, tau, &tilt, &scheme, budget, DEFAULT_MIN_PER_STRATUM, rng)?
        }
    };
    Ok(Run { sample, calibration })
}

#[derive(Clone, Debug, Serialize)]
pub struct CarSolution {
    pub car: f64,
    pub iterations: usize,
    /// CaR after the pilot and after each recalibration.
    pub trace: Vec<f64>,
    pub calibration: Option<IsCalibration>,
}

fn quantile_of(sample: &WeightedSample, alpha: f64) -> Result<f64> {
    sample
        .tail_quantile(alpha)
        .ok_or_else(|| Error::Argument("cannot take a quantile of an empty sample".into()))
}

/// CaR at level `α`: the weighted `(1 - α)`-quantile of simulated
/// concentrations. IS and SIS start from a naive pilot and re-tilt toward
/// the current estimate until it moves by less than 0.1%.
pub fn solve_car(model: &PortfolioModel, query: &RiskQuery) -> Result<CarSolution> {
    query.validate()?;
    let pilot = simulate_naive(model, query.budget, &query.rng())?;
    solve_car_from(model, query, &pilot)
}

fn solve_car_from(model: &PortfolioModel, query: &RiskQuery, pilot: &WeightedSample) -> Result<CarSolution> {
    let mut tau = quantile_of(pilot, query.alpha)?;
    let mut trace = vec![tau];
    if query.estimator == EstimatorKind::Naive {
        return Ok(CarSolution {
            car: tau,
            iterations: 1,
            trace,
            calibration: None,
        });
    }
    let rng = query.rng();
    for it in 1..=CAR_MAX_ITER {
        let run = simulate_at(model, query.estimator, tau, query.budget, &rng)?;
        let next = quantile_of(&run.sample, query.alpha)?;
        trace.push(next);
        let done = (next - tau).abs() <= CAR_TOLERANCE * tau;
        tau = next;
        if done {
            return Ok(CarSolution {
                car: tau,
                iterations: it,
                trace,
                calibration: run.calibration,
            });
        }
    }
    Err(Error::Convergence {
        what: "CaR recalibration",
        iterations: CAR_MAX_ITER,
        trace,
    })
}

/// CCaR: the conditional excess at `car`, simulated with the query's
/// estimator tilted toward `car`.
pub fn compute_ccar(model: &PortfolioModel, query: &RiskQuery, car: f64) -> Result<EstimateResult> {
    query.validate()?;
    let run = simulate_at(model, query.estimator, car, query.budget, &query.rng())?;
    Ok(run.sample.estimate(car).1)
}

/// `(naive halfwidth / other halfwidth)²`; infinite when the other
/// half-width is zero, NaN when the naive one is undefined.
pub fn variance_reduction_factor(naive: &EstimateResult, other: &EstimateResult) -> f64 {
    if naive.empty_tail || !naive.halfwidth95.is_finite() {
        return f64::NAN;
    }
    if other.halfwidth95 == 0.0 {
        return f64::INFINITY;
    }
    (naive.halfwidth95 / other.halfwidth95).powi(2)
}

#[derive(Clone, Debug, Serialize)]
pub struct RiskRow {
    pub alpha: f64,
    pub car: f64,
    pub ccar: EstimateResult,
    /// Estimated exceedance probability at `car`.
    pub ep: EstimateResult,
    /// Variance reduction of the CCaR estimate against naive sampling at the
    /// same budget and threshold.
    pub vr: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RiskReport {
    pub estimator: EstimatorKind,
    pub budget: usize,
    pub seed: u64,
    pub model_hash: String,
    pub rows: Vec<RiskRow>,
}

/// CaR, CCaR and VR for every level in `alphas` (strictly decreasing).
/// One naive sample serves as the pilot and the VR baseline for all rows.
pub fn risk_report(
    model: &PortfolioModel,
    alphas: &[f64],
    estimator: EstimatorKind,
    budget: usize,
    seed: u64,
    model_hash: &str,
) -> Result<RiskReport> {
    if alphas.is_empty() {
        return Err(Error::Argument("no alpha levels given".into()));
    }
    if alphas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Argument("alpha levels must be strictly decreasing".into()));
    }
    let queries: Vec<RiskQuery> = alphas
        .iter()
        .map(|&alpha| RiskQuery {
            alpha,
            estimator,
            budget,
            seed,
        })
        .collect();
    for q in &queries {
        q.validate()?;
    }
    let naive = simulate_naive(model, budget, &queries[0].rng())?;
    let mut rows = Vec::with_capacity(alphas.len());
    for q in &queries {
        let sol = solve_car_from(model, q, &naive)?;
        let (ep, ccar) = match estimator {
            EstimatorKind::Naive => naive.estimate(sol.car),
            _ => simulate_at(model, estimator, sol.car, budget, &q.rng())?.sample.estimate(sol.car),
        };
        let vr = variance_reduction_factor(&naive.estimate(sol.car).1, &ccar);
        rows.push(RiskRow {
            alpha: q.alpha,
            car: sol.car,
            ccar,
            ep,
            vr,
            iterations: sol.iterations,
        });
    }
    Ok(RiskReport {
        estimator,
        budget,
        seed,
        model_hash: model_hash.to_string(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub ep: f64,
    pub halfwidth95: f64,
    /// Replications with concentration above `tau`.
    pub exceedances: usize,
}

impl CurvePoint {
    /// The interval is degenerate when nothing exceeded `tau` or it reaches
    /// down to zero.
    pub fn degenerate(&self) -> bool {
        self.exceedances == 0 || self.ep - self.halfwidth95 <= 0.0
    }
}

/// Tilts for the curve mixture: the identity plus `CURVE_TILTS` tilts at
/// thresholds spaced geometrically from the baseline to the top of the grid.
fn curve_components(model: &PortfolioModel, grid: &[f64], estimator: EstimatorKind) -> Result<Vec<MixtureComponent>> {
    let strata = if estimator == EstimatorKind::Sis { DEFAULT_STRATA } else { 1 };
    let top = grid[grid.len() - 1];
    let baseline = model.baseline();
    let identity = IsParams::identity(model.dim());
    let mut parts = vec![(grid[0], identity.clone(), identity.direction(model)?)];
    if top > baseline {
        let lo = grid[0].max(baseline);
        for j in 1..=CURVE_TILTS {
            let t = lo * (top / lo).powf(j as f64 / CURVE_TILTS as f64);
            let cal = calibrate_is(model, t)?;
            parts.push((t, cal.params, cal.boundary_normal));
        }
    }
    let share = 1.0 / parts.len() as f64;
    parts
        .into_iter()
        .map(|(steer, tilt, dir)| {
            Ok(MixtureComponent {
                share,
                steer,
                tilt,
                scheme: StratificationScheme::equiprobable(dir, strata)?,
            })
        })
        .collect()
}

/// Estimated exceedance probability at every threshold of `grid` (strictly
/// increasing), all read off one weighted sample so the curve is
/// nonincreasing.
pub fn exceedance_curve(
    model: &PortfolioModel,
    grid: &[f64],
    estimator: EstimatorKind,
    budget: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::Argument("empty threshold grid".into()));
    }
    if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("threshold grid must be finite, nonnegative and strictly increasing".into()));
    }
    if budget < MIN_BUDGET {
        return Err(Error::Argument(format!("budget {budget} below the minimum {MIN_BUDGET}")));
    }
    let rng = StreamRng::new(seed, 0);
    let sample = match estimator {
        EstimatorKind::Naive => simulate_naive(model, budget, &rng)?,
        _ => simulate_mixture(model, &curve_components(model, grid, estimator)?, budget, DEFAULT_MIN_PER_STRATUM, &rng)?,
    };
    Ok(grid
        .iter()
        .map(|&tau| {
            let (ep, _) = sample.estimate(tau);
            CurvePoint {
                tau,
                ep: ep.estimate,
                halfwidth95: ep.halfwidth95,
                exceedances: sample.strata.iter().map(|s| s.c.iter().filter(|&&c| c > tau).count()).sum(),
            }
        })
        .collect())
}

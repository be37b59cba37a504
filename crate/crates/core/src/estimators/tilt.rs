//! The importance-sampling density: `Z ~ N(μ, I)` and `Y ~ Gamma(ν/2, θ)`
//! in place of `Z ~ N(0, I)` and `Y ~ χ²_ν = Gamma(ν/2, 2)`.

use serde::Serialize;

use crate::copula::{CopulaDraw, CopulaFamily, PortfolioModel};
use crate::error::{Error, Result};
use crate::statkit::{gamma_pdf, normal_pdf, normal_quantile};

use super::sampling_dim;

const THETA_FLOOR: f64 = 1e-3;
const MAX_ITER: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsParams {
    /// Mean shift of the normal vector.
    pub shift: Vec<f64>,
    /// Gamma scale for the mixing variable; 2 leaves it untouched.
    pub theta: f64,
}

impl IsParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            theta: 2.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.theta == 2.0 && self.shift.iter().all(|&m| m == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 2.0) {
            return Err(Error::Argument(format!("IS gamma scale {} outside (0, 2]", self.theta)));
        }
        if self.shift.iter().any(|m| !m.is_finite()) {
            return Err(Error::Argument("IS mean shift is not finite".into()));
        }
        Ok(())
    }

    /// Unit direction of the shift, or of steepest portfolio growth when
    /// there is no shift, in sampling coordinates (the mixing score gets 0).
    pub fn direction(&self, model: &PortfolioModel) -> Result<Vec<f64>> {
        let norm = self.shift.iter().map(|m| m * m).sum::<f64>().sqrt();
        let mut dir = if norm > 0.0 {
            self.shift.iter().map(|m| m / norm).collect()
        } else {
            growth_direction(model)?
        };
        dir.resize(sampling_dim(model), 0.0);
        Ok(dir)
    }
}

/// `ln W` for a draw `(z, y)` taken under the tilted density.
pub(crate) fn ln_likelihood_ratio(tilt: &IsParams, nu: Option<f64>, z: &[f64], y: Option<f64>) -> f64 {
    let mz: f64 = tilt.shift.iter().zip(z).map(|(a, b)| a * b).sum();
    let mm: f64 = tilt.shift.iter().map(|a| a * a).sum();
    let mut e = -mz + 0.5 * mm;
    if let (Some(nu), Some(y)) = (nu, y) {
        e += 0.5 * nu * (0.5 * tilt.theta).ln() + (-0.5 * y + y / tilt.theta);
    }
    e
}

/// `W = exp(-μ'Z + μ'μ/2) (θ/2)^{ν/2} exp(-Y/2 + Y/θ)`: original over tilted
/// joint density of `(Z, Y)`, where `Z` is the shifted normal vector.
pub fn likelihood_ratio(draw: &CopulaDraw, tilt: &IsParams, nu: f64) -> f64 {
    ln_likelihood_ratio(tilt, Some(nu), &draw.z, draw.y).exp()
}

/// Unit vector in `Z`-space along which the concentration grows fastest at
/// the origin.
pub fn growth_direction(model: &PortfolioModel) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut g = vec![0.0; d];
    model.concentration_gradient(&vec![0.0; d], &mut g)?;
    let mut zg = vec![0.0; d];
    model.factor().mul_transpose(&g, &mut zg);
    let norm = zg.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        Ok(zg.iter().map(|x| x / norm).collect())
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        Ok(e)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IsCalibration {
    pub params: IsParams,
    pub threshold: f64,
    /// Most likely copula point `v*` with `C(v*) = τ`.
    pub design_point: Vec<f64>,
    /// `v*' Σ⁻¹ v*`.
    pub distance: f64,
    pub iterations: usize,
    /// Unit normal of the surface `C = τ` at the tilted mode, in sampling
    /// coordinates `(Z, η)`; the natural stratification direction.
    pub boundary_normal: Vec<f64>,
    /// Set when the search failed and the identity tilt was returned.
    pub warning: Option<String>,
}

/// Mode-matching IS parameters for threshold `tau`.
///
/// The most likely `(z, y)` with `C ≥ τ` factors through the copula point
/// `v* = argmin v'Σ⁻¹v subject to C(v) ≥ τ`; with `q = v*'Σ⁻¹v*` the joint
/// mode has `y* = (ν - 2)ν / (ν + q)` and `z* = sqrt(y*/ν) L⁻¹ v*`. The
/// tilt sets `μ = z*` and puts the gamma mode at `y*`, i.e.
/// `θ = 2ν / (ν + q)`.
pub fn calibrate_is(model: &PortfolioModel, tau: f64) -> Result<IsCalibration> {
    let baseline = model.baseline();
    if !(tau > baseline) || !tau.is_finite() {
        return Err(Error::Argument(format!(
            "IS calibration needs a threshold above the baseline concentration {baseline}, got {tau}"
        )));
    }
    match design_point(model, tau) {
        Ok((v, iterations)) => {
            let l = model.factor();
            let u = l.solve(&v);
            let q: f64 = u.iter().map(|x| x * x).sum();
            let params = match model.family() {
                CopulaFamily::Normal => IsParams { shift: u, theta: 2.0 },
                CopulaFamily::T => {
                    let nu = model.nu();
                    let theta = (2.0 * nu / (nu + q)).clamp(THETA_FLOOR, 2.0);
                    // gamma mode θ(ν/2 - 1) when it exists, else its mean
                    let y = if nu > 2.0 { theta * (0.5 * nu - 1.0) } else { theta * 0.5 * nu };
                    let k = (y / nu).sqrt();
                    IsParams {
                        shift: u.iter().map(|x| k * x).collect(),
                        theta,
                    }
                }
            };
            let boundary_normal = boundary_normal(model, &params, &v)?;
            Ok(IsCalibration {
                params,
                threshold: tau,
                design_point: v,
                distance: q,
                iterations,
                boundary_normal,
                warning: None,
            })
        }
        Err(e) => Ok(IsCalibration {
            boundary_normal: IsParams::identity(model.dim()).direction(model)?,
            params: IsParams::identity(model.dim()),
            threshold: tau,
            design_point: vec![0.0; model.dim()],
            distance: 0.0,
            iterations: 0,
            warning: Some(format!("IS calibration failed, using the identity tilt: {e}")),
        }),
    }
}

/// Gradient of `C` with respect to `(Z, η)` at `Z = μ`, `Y` at the tilted
/// gamma mode, normalized. `v*` is the copula point those values map to.
fn boundary_normal(model: &PortfolioModel, params: &IsParams, v: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut g = vec![0.0; d];
    model.concentration_gradient(v, &mut g)?;
    let mut out = vec![0.0; sampling_dim(model)];
    model.factor().mul_transpose(&g, &mut out[..d]);
    if model.family() == CopulaFamily::T {
        let nu = model.nu();
        let theta = params.theta;
        let y = if nu > 2.0 { theta * (0.5 * nu - 1.0) } else { theta * 0.5 * nu };
        let k = (nu / y).sqrt();
        out[..d].iter_mut().for_each(|x| *x *= k);
        let dc_dy = -0.5 / y * g.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let p = statrs::function::gamma::gamma_lr(0.5 * nu, y / theta);
        let eta = normal_quantile(p)?;
        let dy_deta = normal_pdf(eta) / gamma_pdf(y, 0.5 * nu, theta);
        out[d] = dc_dy * dy_deta;
    }
    if normalize(&mut out) == 0.0 || out.iter().any(|x| !x.is_finite()) {
        return params.direction(model);
    }
    Ok(out)
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|a| *a /= n);
    }
    n
}

/// `Σ g` for the gradient `g` of `C` at `v`, normalized.
fn kkt_direction(model: &PortfolioModel, v: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut g = vec![0.0; d];
    model.concentration_gradient(v, &mut g)?;
    let mut lg = vec![0.0; d];
    model.factor().mul_transpose(&g, &mut lg);
    let mut out = vec![0.0; d];
    model.factor().mul(&lg, &mut out);
    if normalize(&mut out) == 0.0 {
        return Err(Error::Calibration("concentration gradient vanished".into()));
    }
    Ok(out)
}

/// Smallest `t > 0` with `C(t u) = τ`.
fn ray_root(model: &PortfolioModel, u: &[f64], tau: f64) -> Result<f64> {
    let f = |t: f64| -> Result<f64> {
        let v: Vec<f64> = u.iter().map(|x| t * x).collect();
        Ok(model.concentration_of(&v)? - tau)
    };
    let (mut lo, mut flo) = (0.0, f(0.0)?);
    if flo >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut fhi = f(hi)?;
    while fhi < 0.0 {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        if hi > 4096.0 {
            return Err(Error::Calibration(format!("threshold {tau} is not reachable along the search ray")));
        }
        fhi = f(hi)?;
    }
    // Illinois false position
    let mut side = 0;
    for _ in 0..200 {
        let t = (lo * fhi - hi * flo) / (fhi - flo);
        let ft = f(t)?;
        if ft == 0.0 || (hi - lo) <= 1e-14 * hi {
            return Ok(t);
        }
        if ft < 0.0 {
            lo = t;
            flo = ft;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            fhi = ft;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if (hi - lo) <= 1e-13 * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Convergence {
        what: "IS design point ray search",
        iterations: 200,
        trace: vec![lo, hi],
    })
}

/// Damped fixed-point search for the KKT condition `v ∝ Σ ∇C(v)` on the
/// surface `C(v) = τ`, accepting only steps that reduce `v'Σ⁻¹v`.
fn design_point(model: &PortfolioModel, tau: f64) -> Result<(Vec<f64>, usize)> {
    let l = model.factor();
    let dist = |v: &[f64]| -> f64 { l.solve(v).iter().map(|x| x * x).sum() };
    let mut dir = kkt_direction(model, &vec![0.0; model.dim()])?;
    let t = ray_root(model, &dir, tau)?;
    let mut v: Vec<f64> = dir.iter().map(|x| t * x).collect();
    let mut q = dist(&v);
    let mut step = 1.0;
    let mut trace = Vec::new();
    let mut stalled = 0;
    for it in 1..=MAX_ITER {
        let target = kkt_direction(model, &v)?;
        let gap = target.iter().zip(&dir).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        trace.push(q);
        // the gradient of the cached quantile is good to ~1e-8, so the
        // stationarity gap cannot be driven to zero; stop once q stalls
        if gap < 1e-7 || stalled >= 5 || step < 1e-10 {
            return Ok((v, it));
        }
        let mut cand: Vec<f64> = dir.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
        normalize(&mut cand);
        let tc = ray_root(model, &cand, tau)?;
        let vc: Vec<f64> = cand.iter().map(|x| tc * x).collect();
        let qc = dist(&vc);
        if qc <= q {
            stalled = if q - qc <= 1e-13 * q { stalled + 1 } else { 0 };
            dir = cand;
            v = vc;
            q = qc;
            step = (step * 1.5).min(1.0);
        } else {
            stalled += 1;
            step *= 0.5;
        }
    }
    trace.drain(..trace.len().saturating_sub(8));
    Err(Error::Convergence {
        what: "IS design point",
        iterations: MAX_ITER,
        trace,
    })
}

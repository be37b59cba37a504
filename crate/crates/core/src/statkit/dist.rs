//! Normal, Student-t and gamma primitives.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use rand_distr::{Distribution, Gamma};
use statrs::function::beta::{beta_reg, inv_beta_reg};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use super::StreamRng;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("normal_cdf", format!("non-finite input {x}")));
    }
    Ok(0.5 * erfc(-x * FRAC_1_SQRT_2))
}

/// Standard normal survival function `1 - Φ(x)`, accurate in the upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("normal_quantile", format!("p = {p} outside (0,1)")));
    }
    Ok(if p <= 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    })
}

/// `x` with `1 - Φ(x) = q`; keeps relative precision for tiny `q`.
pub fn normal_quantile_upper(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain("normal_quantile", format!("q = {q} outside (0,1)")));
    }
    Ok(-lower_quantile(q))
}

// p <= 0.5 branch, one Halley step on the lower tail.
fn lower_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    let e = 0.5 * erfc(-x * FRAC_1_SQRT_2) - p;
    let u = e / normal_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

fn check_dof(func: &'static str, nu: f64) -> Result<()> {
    if !(nu > 0.0) || nu.is_nan() {
        return Err(Error::domain(func, format!("degrees of freedom {nu} must be positive")));
    }
    Ok(())
}

/// Upper tail `P(T > x)` for `x >= 0`.
fn t_upper_tail(x: f64, nu: f64) -> f64 {
    let x2 = x * x;
    if x2 < nu {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    }
}

/// Student-t CDF with (possibly non-integer) `nu` degrees of freedom.
pub fn t_cdf(x: f64, nu: f64) -> Result<f64> {
    check_dof("t_cdf", nu)?;
    if x.is_nan() {
        return Err(Error::domain("t_cdf", "NaN input"));
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(if x < 0.0 {
        t_upper_tail(-x, nu)
    } else {
        1.0 - t_upper_tail(x, nu)
    })
}

/// `P(T > x)`, precise for large positive `x`.
pub fn t_sf(x: f64, nu: f64) -> Result<f64> {
    let lower = t_cdf(-x, nu)?;
    Ok(lower)
}

pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

/// Inverse Student-t CDF: incomplete-beta inversion polished by Newton on
/// the log-tail against log-abscissa, which is near-linear for power tails.
pub fn t_quantile(p: f64, nu: f64) -> Result<f64> {
    check_dof("t_quantile", nu)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("t_quantile", format!("p = {p} outside (0,1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let tail = p.min(1.0 - p);
    let ib = inv_beta_reg(0.5 * nu, 0.5, 2.0 * tail);
    let mut x = if ib > 0.0 && ib < 1.0 {
        (nu * (1.0 / ib - 1.0)).sqrt()
    } else {
        1.0
    };
    if !(x > 0.0 && x.is_finite()) {
        x = 1.0;
    }
    let ln_target = tail.ln();
    for _ in 0..60 {
        let t = t_upper_tail(x, nu);
        let d = t_pdf(x, nu);
        if !(t > 0.0 && d > 0.0) {
            break;
        }
        // s = ln x, h(s) = ln T(e^s) - ln tail, h'(s) = -x f(x) / T(x)
        let h = t.ln() - ln_target;
        let dh = -x * d / t;
        let step = (-h / dh).clamp(-2.0, 2.0);
        x *= step.exp();
        if step.abs() <= 4e-16 {
            break;
        }
    }
    Ok(if p < 0.5 { -x } else { x })
}

/// Gamma density with the given shape and scale.
pub fn gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let t = x / scale;
    ((shape - 1.0) * t.ln() - t - ln_gamma(shape)).exp() / scale
}

/// Gamma quantile from a normal score: the `x` with `F(x) = Φ(z)`, where
/// `F` is the gamma CDF (shape, scale). Either tail keeps relative
/// precision.
pub fn gamma_quantile_from_score(z: f64, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain("gamma_quantile", format!("shape {shape} and scale {scale} must be positive")));
    }
    if !z.is_finite() {
        return Err(Error::domain("gamma_quantile", format!("non-finite score {z}")));
    }
    // lower tail mass when z <= 0, upper tail mass otherwise
    let upper = z > 0.0;
    let tail = normal_sf(z.abs());
    if tail == 0.0 {
        return Err(Error::domain("gamma_quantile", format!("score {z} is too extreme")));
    }
    // Wilson-Hilferty start, small-x series start where it breaks down
    let a = shape;
    let c = 1.0 / (9.0 * a);
    let wh = a * (1.0 - c + z * c.sqrt()).powi(3);
    let small = ((1.0 - tail).min(tail) * (ln_gamma(a + 1.0)).exp()).powf(1.0 / a);
    let mut x = if wh > 0.0 && !(z < 0.0 && small < wh * 0.1) { wh } else { small.max(f64::MIN_POSITIVE) };
    if !(x > 0.0 && x.is_finite()) {
        x = a;
    }
    let ln_target = tail.ln();
    for _ in 0..100 {
        let t = if upper { gamma_ur(a, x) } else { gamma_lr(a, x) };
        let d = gamma_pdf(x, a, 1.0);
        if !(t > 0.0 && d > 0.0) {
            break;
        }
        // s = ln x; d ln T / ds = ∓ x f(x) / T
        let h = t.ln() - ln_target;
        let dh = if upper { -x * d / t } else { x * d / t };
        let step = (-h / dh).clamp(-1.0, 1.0);
        x *= step.exp();
        if step.abs() <= 1e-15 {
            break;
        }
    }
    Ok(x * scale)
}

/// A gamma sampler (shape, scale). Chi-square with `nu` degrees of freedom is
/// `GammaSampler::chi_square(nu)`, i.e. gamma(nu/2, 2).
#[derive(Clone, Debug)]
pub struct GammaSampler {
    inner: Gamma<f64>,
}

impl GammaSampler {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(
                "sample_gamma",
                format!("shape {shape} and scale {scale} must be positive"),
            ));
        }
        let inner = Gamma::new(shape, scale)
            .map_err(|e| Error::domain("sample_gamma", e.to_string()))?;
        Ok(Self { inner })
    }

    pub fn chi_square(nu: f64) -> Result<Self> {
        Self::new(0.5 * nu, 2.0)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        self.inner.sample(rng)
    }
}

/// One gamma draw. Prefer [`GammaSampler`] in loops.
pub fn sample_gamma(shape: f64, scale: f64, rng: &mut StreamRng) -> Result<f64> {
    Ok(GammaSampler::new(shape, scale)?.sample(rng))
}

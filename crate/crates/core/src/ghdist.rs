//! The generalized hyperbolic (GH) law in the (λ, α, δ, β, μ) parametrization:
//!
//! ```text
//! f(x) = a · q^(λ-1/2) · K_{λ-1/2}(α q) · exp(β (x - μ)),   q = sqrt(δ² + (x-μ)²)
//! a    = γ^λ / (sqrt(2π) · α^(λ-1/2) · δ^λ · K_λ(δ γ)),      γ = sqrt(α² - β²)
//! ```
//!
//! Distribution functions are computed by adaptive quadrature of the
//! density towards the nearer infinite end, so both tails keep relative
//! precision. [`GhMarginal`] adds a quantile cache for bulk simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statkit::quad::{integrate, integrate_from_neg_infinity, integrate_to_infinity};
use crate::statkit::{bessel_k_scaled, ln_bessel_k, normal_pdf, normal_quantile, normal_quantile_upper, normal_sf};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_RTOL: f64 = 1e-13;

/// Five GH parameters; applies to daily log-ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhParams {
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
    pub mu: f64,
}

impl GhParams {
    pub fn new(lambda: f64, alpha: f64, delta: f64, beta: f64, mu: f64) -> Result<Self> {
        let p = Self {
            lambda,
            alpha,
            delta,
            beta,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.alpha, self.delta, self.beta, self.mu];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("gh", format!("non-finite parameter in {self:?}")));
        }
        if !(self.alpha > self.beta.abs()) {
            return Err(Error::domain("gh", format!("need α > |β|, got α = {}, β = {}", self.alpha, self.beta)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::domain("gh", format!("need δ > 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// A validated GH law with its normalizing constant precomputed.
#[derive(Clone, Debug)]
pub struct GhDistribution {
    p: GhParams,
    ln_norm: f64,
    // quadrature panel width in the tails
    step: f64,
    mean: f64,
    variance: f64,
}

impl GhDistribution {
    pub fn new(p: GhParams) -> Result<Self> {
        p.validate()?;
        let gamma = (p.alpha * p.alpha - p.beta * p.beta).sqrt();
        let zeta = p.delta * gamma;
        let ln_norm = p.lambda * gamma.ln()
            - LN_SQRT_2PI
            - (p.lambda - 0.5) * p.alpha.ln()
            - p.lambda * p.delta.ln()
            - ln_bessel_k(p.lambda, zeta)?;
        let k0 = bessel_k_scaled(p.lambda, zeta)?;
        let r1 = bessel_k_scaled(p.lambda + 1.0, zeta)? / k0;
        let r2 = bessel_k_scaled(p.lambda + 2.0, zeta)? / k0;
        let mean = p.mu + p.beta * p.delta / gamma * r1;
        let variance = p.delta / gamma * r1 + (p.beta * p.delta / gamma).powi(2) * (r2 - r1 * r1);
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::domain("gh_moments", format!("degenerate moments for {p:?}")));
        }
        Ok(Self {
            p,
            ln_norm,
            step: 0.5 * variance.sqrt(),
            mean,
            variance,
        })
    }

    pub fn params(&self) -> &GhParams {
        &self.p
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let p = &self.p;
        let dx = x - p.mu;
        let q = p.delta.hypot(dx);
        let arg = p.alpha * q;
        // order-λ-1/2 Bessel at an argument bounded below by αδ > 0
        let lk = match bessel_k_scaled(p.lambda - 0.5, arg) {
            Ok(v) => v.ln() - arg,
            Err(_) => return f64::NEG_INFINITY,
        };
        self.ln_norm + (p.lambda - 0.5) * q.ln() + lk + p.beta * dx
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// `P(X <= x)` integrated from the left.
    fn lower_mass(&self, x: f64) -> Result<f64> {
        integrate_from_neg_infinity(|t| self.pdf(t), x, self.step, TAIL_RTOL)
    }

    /// `P(X > x)` integrated from the right.
    fn upper_mass(&self, x: f64) -> Result<f64> {
        integrate_to_infinity(|t| self.pdf(t), x, self.step, TAIL_RTOL)
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::domain("gh_cdf", "NaN input"));
        }
        if x == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        if x <= self.p.mu {
            Ok(self.lower_mass(x)?.min(1.0))
        } else {
            Ok((1.0 - self.upper_mass(x)?).max(0.0))
        }
    }

    /// `P(X > x)`, precise in the upper tail.
    pub fn sf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::domain("gh_cdf", "NaN input"));
        }
        if x > self.p.mu {
            self.upper_mass(x)
        } else {
            Ok((1.0 - self.lower_mass(x)?).max(0.0))
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain("gh_quantile", format!("u = {u} outside (0,1)")));
        }
        if u <= 0.5 {
            self.solve_tail(u, false)
        } else {
            self.solve_tail(1.0 - u, true)
        }
    }

    /// `x` with `P(X > x) = q`.
    pub fn quantile_upper(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain("gh_quantile", format!("tail mass {q} outside (0,1)")));
        }
        if q <= 0.5 {
            self.solve_tail(q, true)
        } else {
            self.solve_tail(1.0 - q, false)
        }
    }

    // Solve lower_mass(x) = m (upper = false) or upper_mass(x) = m (upper = true)
    // by safeguarded Newton on the log of the tail mass.
    fn solve_tail(&self, m: f64, upper: bool) -> Result<f64> {
        let sd = self.variance.sqrt();
        let mass = |x: f64| -> Result<f64> {
            if upper {
                self.sf(x)
            } else {
                self.cdf(x)
            }
        };
        // signed so that g(x) = ln mass(x) - ln m is increasing in `s * x`
        let s = if upper { -1.0 } else { 1.0 };
        let mut lo = self.mean;
        let mut hi = self.mean;
        // bracket: mass(lo) <= m <= mass(hi) along direction s
        let mut w = sd;
        let mut iters = 0;
        while mass(lo)? > m {
            lo -= s * w;
            w *= 2.0;
            iters += 1;
            if iters > 200 {
                return Err(Error::Convergence { what: "gh_quantile bracket", iterations: iters, trace: vec![lo] });
            }
        }
        w = sd;
        while mass(hi)? < m {
            hi += s * w;
            w *= 2.0;
            iters += 1;
            if iters > 400 {
                return Err(Error::Convergence { what: "gh_quantile bracket", iterations: iters, trace: vec![hi] });
            }
        }
        let ln_m = m.ln();
        let mut x = 0.5 * (lo + hi);
        let mut trace = Vec::new();
        for _ in 0..200 {
            let fx = mass(x)?;
            let g = fx.ln() - ln_m;
            trace.push(x);
            if g == 0.0 {
                return Ok(x);
            }
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x);
            // d/dx ln mass = s * pdf / mass
            let newton = x - g * fx / (s * d);
            let inside = (newton - lo) * (newton - hi) < 0.0;
            let next = if d > 0.0 && newton.is_finite() && inside { newton } else { 0.5 * (lo + hi) };
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || (hi - lo).abs() <= 1e-15 * (1.0 + x.abs()) {
                return Ok(next);
            }
            x = next;
        }
        trace.drain(..trace.len().saturating_sub(8));
        Err(Error::Convergence { what: "gh_quantile", iterations: 200, trace })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

pub fn gh_pdf(p: &GhParams, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain("gh_pdf", format!("non-finite input {x}")));
    }
    Ok(GhDistribution::new(*p)?.pdf(x))
}

pub fn gh_cdf(p: &GhParams, x: f64) -> Result<f64> {
    GhDistribution::new(*p)?.cdf(x)
}

pub fn gh_quantile(p: &GhParams, u: f64) -> Result<f64> {
    GhDistribution::new(*p)?.quantile(u)
}

/// `(mean, variance)` in closed form via Bessel-K ratios.
pub fn gh_moments(p: &GhParams) -> Result<(f64, f64)> {
    let d = GhDistribution::new(*p)?;
    Ok((d.mean, d.variance))
}

/// Half-width of the cached normal-score range; Φ(-8) ≈ 6.2e-16 covers the
/// `[1e-15, 1 - 1e-15]` probability clamp.
pub const SCORE_RANGE: f64 = 8.0;
const CACHE_NODES: usize = 1025;
const CACHE_TOL: f64 = 1e-8;

/// A GH marginal with a quantile cache for simulation.
///
/// Nodes sit on an equispaced grid of normal scores `z` (1025 nodes over
/// `[-8, 8]`); the map `z ↦ G⁻¹(Φ(z))` is interpolated by cubic Hermite
/// polynomials using the exact slope `φ(z)/g(x)`. Node masses are
/// accumulated outward-in from each tail so relative tail precision is kept.
#[derive(Clone, Debug)]
pub struct GhMarginal {
    dist: GhDistribution,
    h: f64,
    xs: Vec<f64>,
    slopes: Vec<f64>,
    // left half: lower mass at node; right half: upper mass at node
    masses: Vec<f64>,
    max_cache_error: f64,
}

impl GhMarginal {
    pub fn new(p: GhParams) -> Result<Self> {
        let dist = GhDistribution::new(p)?;
        let mut nodes = CACHE_NODES;
        loop {
            let m = Self::build(dist.clone(), nodes)?;
            if m.max_cache_error <= CACHE_TOL {
                return Ok(m);
            }
            if nodes > 8 * CACHE_NODES {
                return Err(Error::Calibration(format!(
                    "GH quantile cache error {:.2e} exceeds {CACHE_TOL:.0e} for {p:?}",
                    m.max_cache_error
                )));
            }
            nodes = 2 * nodes - 1;
        }
    }

    fn build(dist: GhDistribution, nodes: usize) -> Result<Self> {
        let half = nodes / 2;
        let h = 2.0 * SCORE_RANGE / (nodes - 1) as f64;
        let z = |k: usize| -SCORE_RANGE + k as f64 * h;
        let mut xs = vec![0.0; nodes];
        let mut masses = vec![0.0; nodes];

        // left half, marching up from the far left tail
        let m0 = normal_sf(SCORE_RANGE);
        xs[0] = dist.quantile(m0)?;
        masses[0] = dist.cdf(xs[0])?;
        for k in 1..=half {
            let target = normal_sf(-z(k));
            let (x, m) = march(&dist, xs[k - 1], masses[k - 1], target, 1.0)?;
            xs[k] = x;
            masses[k] = m;
        }
        // right half, marching down from the far right tail
        let last = nodes - 1;
        xs[last] = dist.quantile_upper(m0)?;
        masses[last] = dist.sf(xs[last])?;
        for k in (half + 1..last).rev() {
            let target = normal_sf(z(k));
            let (x, m) = march(&dist, xs[k + 1], masses[k + 1], target, -1.0)?;
            xs[k] = x;
            masses[k] = m;
        }
        let slopes: Vec<f64> = (0..nodes).map(|k| normal_pdf(z(k)) / dist.pdf(xs[k])).collect();
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Calibration("GH quantile cache nodes not increasing".into()));
            }
        }
        let mut m = Self {
            dist,
            h,
            xs,
            slopes,
            masses,
            max_cache_error: 0.0,
        };
        m.max_cache_error = m.verify()?;
        Ok(m)
    }

    // Worst |G(cache(z)) - Φ(z)| over interval midpoints.
    fn verify(&self) -> Result<f64> {
        let nodes = self.xs.len();
        let half = nodes / 2;
        let mut worst: f64 = 0.0;
        for k in 0..nodes - 1 {
            let zm = -SCORE_RANGE + (k as f64 + 0.5) * self.h;
            let x = self.hermite(k, 0.5);
            let err = if k < half {
                let m = self.masses[k] + integrate(|t| self.dist.pdf(t), self.xs[k], x, 0.0, 1e-14)?;
                (m - normal_sf(-zm)).abs()
            } else {
                let m = self.masses[k + 1] + integrate(|t| self.dist.pdf(t), x, self.xs[k + 1], 0.0, 1e-14)?;
                (m - normal_sf(zm)).abs()
            };
            worst = worst.max(err);
        }
        Ok(worst)
    }

    fn hermite(&self, k: usize, t: f64) -> f64 {
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.h, self.slopes[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * x0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * x1 + (t3 - t2) * m1
    }

    pub fn distribution(&self) -> &GhDistribution {
        &self.dist
    }

    pub fn params(&self) -> &GhParams {
        self.dist.params()
    }

    /// Largest probability-scale error of the cache found at build time.
    pub fn cache_error(&self) -> f64 {
        self.max_cache_error
    }

    /// `G⁻¹(Φ(z))`.
    pub fn quantile_from_score(&self, z: f64) -> Result<f64> {
        if z.is_nan() {
            return Err(Error::domain("gh_quantile", "NaN score"));
        }
        if z.abs() > SCORE_RANGE {
            return if z < 0.0 {
                self.dist.quantile(normal_sf(-z))
            } else {
                self.dist.quantile_upper(normal_sf(z))
            };
        }
        let pos = (z + SCORE_RANGE) / self.h;
        let k = (pos.floor() as usize).min(self.xs.len() - 2);
        Ok(self.hermite(k, pos - k as f64))
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::domain("gh_quantile", format!("u = {u} outside (0,1)")));
        }
        let z = if u <= 0.5 { normal_quantile(u)? } else { normal_quantile_upper(1.0 - u)? };
        self.quantile_from_score(z)
    }

    /// CDF anchored at the nearest cache node.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::domain("gh_cdf", "NaN input"));
        }
        let n = self.xs.len();
        if !(x > self.xs[0] && x < self.xs[n - 1]) {
            return self.dist.cdf(x);
        }
        let half = n / 2;
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let pdf = |t: f64| self.dist.pdf(t);
        if k < half {
            Ok(self.masses[k] + integrate(pdf, self.xs[k], x, 0.0, 1e-14)?)
        } else {
            let right = self.masses[k + 1] + integrate(pdf, x, self.xs[k + 1], 0.0, 1e-14)?;
            Ok(1.0 - right)
        }
    }
}

/// Step from a node with accumulated tail mass `m0` to the abscissa where the
/// accumulated mass reaches `target`. `dir = +1` accumulates lower mass moving
/// right, `dir = -1` upper mass moving left.
fn march(dist: &GhDistribution, x0: f64, m0: f64, target: f64, dir: f64) -> Result<(f64, f64)> {
    let pdf = |t: f64| dist.pdf(t);
    let seg = |x: f64| -> Result<f64> {
        if dir > 0.0 {
            integrate(pdf, x0, x, 0.0, 1e-14)
        } else {
            integrate(pdf, x, x0, 0.0, 1e-14)
        }
    };
    let need = target - m0;
    if need <= 0.0 {
        return Err(Error::Calibration("GH quantile cache: non-increasing node masses".into()));
    }
    let mut x = x0 + dir * need / dist.pdf(x0).max(1e-300);
    // bracket between x0 and something with enough mass
    let (mut lo, mut hi) = (x0, x0);
    let mut far = x;
    let mut guard = 0;
    while seg(far)? < need {
        far += dir * (far - x0).abs().max(1e-12);
        guard += 1;
        if guard > 200 {
            return Err(Error::Convergence { what: "GH cache march", iterations: guard, trace: vec![far] });
        }
    }
    if dir > 0.0 {
        hi = far;
    } else {
        lo = far;
    }
    if !((x - lo) * (x - hi) < 0.0) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..100 {
        let r = seg(x)? - need;
        if r.abs() <= 1e-15 * target {
            return Ok((x, m0 + seg(x)?));
        }
        // mass increases with dir * x
        if (r > 0.0) == (dir > 0.0) {
            hi = x;
        } else {
            lo = x;
        }
        let d = dist.pdf(x);
        let newton = x - dir * r / d;
        let next = if d > 0.0 && (newton - lo) * (newton - hi) < 0.0 { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) {
            return Ok((next, m0 + seg(next)?));
        }
        x = next;
    }
    Err(Error::Convergence { what: "GH cache march", iterations: 100, trace: vec![x] })
}

/// GH rows of the reference portfolio, in city order.
#[cfg(test)]
pub(crate) fn reference_rows() -> [GhParams; 5] {
    [
        GhParams { lambda: 0.1894, alpha: 2.4296, delta: 0.7561, beta: -1.0516, mu: 0.5075 },
        GhParams { lambda: 1.8041, alpha: 3.3702, delta: 0.0066, beta: -0.8673, mu: 0.2959 },
        GhParams { lambda: 1.1848, alpha: 6.4420, delta: 0.5492, beta: -4.0233, mu: 0.7318 },
        GhParams { lambda: 1.7675, alpha: 4.8022, delta: 0.4498, beta: -1.7954, mu: 0.4339 },
        GhParams { lambda: 2.0100, alpha: 3.9889, delta: 0.0500, beta: -1.0875, mu: 0.3041 },
    ]
}

//! Copula dependence and the map from copula variates to portfolio
//! concentration.
//!
//! A draw is `V = L Z` (normal family) or `V = L Z / sqrt(Y/ν)` (t family),
//! with `L` the Cholesky factor of the correlation matrix and `Y ~ χ²_ν`.
//! City `d` then gets the log-ratio `r_d = s_d G_d⁻¹(F(V_d))` and the
//! portfolio concentration is `C = Σ w_d PM⁰_d exp(r_d)`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghdist::{gh_moments, GhMarginal, GhParams};
use crate::statkit::{normal_pdf, normal_quantile, t_cdf, t_pdf, GammaSampler, StreamRng};

/// Probability clamp applied to `F(V_d)` before the marginal quantile.
pub const PROB_CLAMP: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Normal,
    T,
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CopulaFamily::Normal => "normal",
            CopulaFamily::T => "t",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    /// Degrees of freedom; ignored by the normal family.
    pub nu: f64,
    /// Correlation matrix, row-major.
    pub sigma: Vec<Vec<f64>>,
}

impl CopulaSpec {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sigma.len();
        if n == 0 {
            return Err(Error::Argument("correlation matrix is empty".into()));
        }
        for (i, row) in self.sigma.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Argument(format!("correlation row {} has {} entries, expected {n}", i + 1, row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Argument(format!("correlation entry ({}, {}) is not finite", i + 1, j + 1)));
                }
                if i == j && (v - 1.0).abs() > 1e-12 {
                    return Err(Error::Argument(format!("correlation diagonal ({0}, {0}) = {v}, expected 1", i + 1)));
                }
                if i != j {
                    if !(v > -1.0 && v < 1.0) {
                        return Err(Error::Argument(format!("correlation ({}, {}) = {v} outside (-1, 1)", i + 1, j + 1)));
                    }
                    if (v - self.sigma[j][i]).abs() > 1e-12 {
                        return Err(Error::Argument(format!("correlation matrix not symmetric at ({}, {})", i + 1, j + 1)));
                    }
                }
            }
        }
        if self.family == CopulaFamily::T && !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Argument(format!("degrees of freedom {} must be positive", self.nu)));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.l.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// `out = L x`.
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.l[i * self.n..i * self.n + i + 1];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = L' x`.
    pub fn mul_transpose(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.n {
            out[j] = (j..self.n).map(|i| self.get(i, j) * x[i]).sum();
        }
    }

    /// Solve `L x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            let s: f64 = (0..i).map(|j| self.get(i, j) * x[j]).sum();
            x[i] = (b[i] - s) / self.get(i, i);
        }
        x
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_factor(sigma: &[Vec<f64>]) -> Result<CholeskyFactor> {
    let n = sigma.len();
    if sigma.iter().any(|r| r.len() != n) {
        return Err(Error::Argument("matrix is not square".into()));
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = sigma[j][j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::Calibration(format!(
                "correlation matrix is not positive definite: pivot {} is {d:.3e}",
                j + 1
            )));
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = sigma[i][j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(CholeskyFactor { n, l })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub name: String,
    pub weight: f64,
    pub pm0: f64,
    pub scale: f64,
    pub gh: GhParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityPortfolio {
    pub copula: CopulaSpec,
    #[serde(rename = "city")]
    pub cities: Vec<City>,
}

impl CityPortfolio {
    pub fn validate(&self) -> Result<()> {
        self.copula.validate()?;
        if self.cities.len() != self.copula.dim() {
            return Err(Error::Argument(format!(
                "{} cities but a {}x{} correlation matrix",
                self.cities.len(),
                self.copula.dim(),
                self.copula.dim()
            )));
        }
        for c in &self.cities {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::Argument(format!("{}: weight {} must be nonnegative", c.name, c.weight)));
            }
            if !(c.pm0 > 0.0 && c.pm0.is_finite()) {
                return Err(Error::Argument(format!("{}: initial concentration {} must be positive", c.name, c.pm0)));
            }
            if !(c.scale > 0.0 && c.scale.is_finite()) {
                return Err(Error::Argument(format!("{}: scaling factor {} must be positive", c.name, c.scale)));
            }
            c.gh.validate()?;
        }
        if !self.cities.iter().any(|c| c.weight > 0.0) {
            return Err(Error::Argument("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// `Σ w_d PM⁰_d`, the concentration at zero log-ratios.
    pub fn baseline(&self) -> f64 {
        self.cities.iter().map(|c| c.weight * c.pm0).sum()
    }
}

/// One draw from the copula.
#[derive(Clone, Debug, PartialEq)]
pub struct CopulaDraw {
    pub z: Vec<f64>,
    /// Chi-square mixing variable; `None` for the normal family.
    pub y: Option<f64>,
    pub v: Vec<f64>,
}

/// A validated portfolio with its Cholesky factor and marginal caches built.
#[derive(Clone, Debug)]
pub struct PortfolioModel {
    portfolio: CityPortfolio,
    factor: CholeskyFactor,
    marginals: Vec<GhMarginal>,
    coef: Vec<f64>,
    score_max: f64,
}

impl PortfolioModel {
    pub fn new(portfolio: CityPortfolio) -> Result<Self> {
        portfolio.validate()?;
        let factor = cholesky_factor(&portfolio.copula.sigma)?;
        let marginals = portfolio
            .cities
            .par_iter()
            .map(|c| GhMarginal::new(c.gh))
            .collect::<Result<Vec<_>>>()?;
        let coef = portfolio.cities.iter().map(|c| c.weight * c.pm0).collect();
        let score_max = -normal_quantile(PROB_CLAMP)?;
        Ok(Self {
            portfolio,
            factor,
            marginals,
            coef,
            score_max,
        })
    }

    pub fn portfolio(&self) -> &CityPortfolio {
        &self.portfolio
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn marginal(&self, d: usize) -> &GhMarginal {
        &self.marginals[d]
    }

    pub fn family(&self) -> CopulaFamily {
        self.portfolio.copula.family
    }

    pub fn nu(&self) -> f64 {
        self.portfolio.copula.nu
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    pub fn baseline(&self) -> f64 {
        self.portfolio.baseline()
    }

    /// Normal score `Φ⁻¹(F(v))` with `F(v)` clamped to `[1e-15, 1 - 1e-15]`.
    pub fn score(&self, v: f64) -> f64 {
        match self.family() {
            CopulaFamily::Normal => v.clamp(-self.score_max, self.score_max),
            CopulaFamily::T => {
                let tail = t_cdf(-v.abs(), self.nu()).unwrap_or(0.0).max(PROB_CLAMP);
                let z = normal_quantile(tail).unwrap_or(-self.score_max);
                if v > 0.0 {
                    -z
                } else {
                    z
                }
            }
        }
    }

    /// Copula-scale density `F'(v)`.
    fn copula_density(&self, v: f64) -> f64 {
        match self.family() {
            CopulaFamily::Normal => normal_pdf(v),
            CopulaFamily::T => t_pdf(v, self.nu()),
        }
    }

    pub fn log_ratio(&self, d: usize, v: f64) -> Result<f64> {
        Ok(self.portfolio.cities[d].scale * self.marginals[d].quantile_from_score(self.score(v))?)
    }

    pub fn concentration_of(&self, v: &[f64]) -> Result<f64> {
        let mut c = 0.0;
        for (d, &vd) in v.iter().enumerate() {
            c += self.coef[d] * self.log_ratio(d, vd)?.exp();
        }
        Ok(c)
    }

    /// `C(v)` and its gradient in `v`.
    pub fn concentration_gradient(&self, v: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut c = 0.0;
        for (d, &vd) in v.iter().enumerate() {
            let s = self.portfolio.cities[d].scale;
            let z = self.score(vd);
            let x = self.marginals[d].quantile_from_score(z)?;
            let term = self.coef[d] * (s * x).exp();
            c += term;
            // dx/dv = F'(v) / g(x); zero where the clamp is active
            let clamped = z.abs() >= self.score_max;
            let g = self.marginals[d].distribution().pdf(x);
            grad[d] = if clamped || g <= 0.0 { 0.0 } else { term * s * self.copula_density(vd) / g };
        }
        Ok(c)
    }

    /// Fill `v` from `z` and `y` (`v = L z / sqrt(y/ν)`).
    pub fn dependent(&self, z: &[f64], y: Option<f64>, v: &mut [f64]) {
        self.factor.mul(z, v);
        if let (CopulaFamily::T, Some(y)) = (self.family(), y) {
            let k = 1.0 / (y / self.nu()).sqrt();
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Draw `Z`, then `Y` (t family), and form `V`.
pub fn sample_copula(spec: &CopulaSpec, l: &CholeskyFactor, rng: &mut StreamRng) -> Result<CopulaDraw> {
    let n = l.dim();
    if spec.dim() != n {
        return Err(Error::Argument(format!("factor dimension {n} does not match copula dimension {}", spec.dim())));
    }
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut v = vec![0.0; n];
    l.mul(&z, &mut v);
    let y = match spec.family {
        CopulaFamily::Normal => None,
        CopulaFamily::T => {
            let y = GammaSampler::chi_square(spec.nu)?.sample(rng);
            let k = 1.0 / (y / spec.nu).sqrt();
            v.iter_mut().for_each(|x| *x *= k);
            Some(y)
        }
    };
    Ok(CopulaDraw { z, y, v })
}

/// `r_d = s_d G_d⁻¹(F(V_d))` for every city.
pub fn marginal_transform(model: &PortfolioModel, draw: &CopulaDraw) -> Result<Vec<f64>> {
    if draw.v.len() != model.dim() {
        return Err(Error::Argument("draw dimension does not match portfolio".into()));
    }
    draw.v.iter().enumerate().map(|(d, &v)| model.log_ratio(d, v)).collect()
}

/// `C = Σ w_d PM⁰_d exp(r_d)`.
pub fn portfolio_concentration(portfolio: &CityPortfolio, r: &[f64]) -> f64 {
    portfolio.cities.iter().zip(r).map(|(c, &rd)| c.weight * c.pm0 * rd.exp()).sum()
}

/// `s_d = σ_d / sqrt(var_d)`.
pub fn scaling_factor(daily_volatility: f64, marginal: &GhParams) -> Result<f64> {
    if !(daily_volatility > 0.0 && daily_volatility.is_finite()) {
        return Err(Error::domain("scaling_factor", format!("volatility {daily_volatility} must be positive")));
    }
    let (_, var) = gh_moments(marginal)?;
    if !(var > 0.0) {
        return Err(Error::domain("scaling_factor", "marginal variance is zero"));
    }
    Ok(daily_volatility / var.sqrt())
}

/// `n` rows of simulated log-ratios, row `k` drawn from stream `k`.
pub fn simulate_log_ratios(model: &PortfolioModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let base = StreamRng::new(seed, 0x6c6f_6772);
    let spec = &model.portfolio().copula;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.fork(k as u64);
            let draw = sample_copula(spec, model.factor(), &mut rng)?;
            marginal_transform(model, &draw)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preset::reference_portfolio;

    #[test]
    fn cholesky_closed_forms() {
        let id = cholesky_factor(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(id.rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = cholesky_factor(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(l.get(1, 0), 0.5);
        assert!((l.get(1, 1) - 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_names_failing_pivot() {
        let err = cholesky_factor(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("pivot 2"), "{err}");
    }

    #[test]
    fn factor_solves_and_transposes() {
        let p = reference_portfolio();
        let l = cholesky_factor(&p.copula.sigma).unwrap();
        let b = [0.3, -1.0, 2.0, 0.1, 0.5];
        let x = l.solve(&b);
        let mut back = [0.0; 5];
        l.mul(&x, &mut back);
        for (a, b) in back.iter().zip(b) {
            assert!((a - b).abs() < 1e-13);
        }
        let mut lt = [0.0; 5];
        l.mul_transpose(&b, &mut lt);
        // <L x, b> = <x, L' b>
        let lhs: f64 = back.iter().zip(b).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(lt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let mut p = reference_portfolio();
        p.validate().unwrap();
        p.copula.sigma[0][1] = 0.2;
        assert!(p.validate().is_err());
        let mut p = reference_portfolio();
        p.copula.nu = 0.0;
        assert!(p.validate().is_err());
        let mut p = reference_portfolio();
        p.cities.iter_mut().for_each(|c| c.weight = 0.0);
        assert!(p.validate().is_err());
        let mut p = reference_portfolio();
        p.cities.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn normal_family_is_t_path_without_mixing() {
        let p = reference_portfolio();
        let l = cholesky_factor(&p.copula.sigma).unwrap();
        let mut normal = p.copula.clone();
        normal.family = CopulaFamily::Normal;
        let dt = sample_copula(&p.copula, &l, &mut StreamRng::new(3, 1)).unwrap();
        let dn = sample_copula(&normal, &l, &mut StreamRng::new(3, 1)).unwrap();
        assert_eq!(dt.z, dn.z);
        assert!(dn.y.is_none());
        let k = (dt.y.unwrap() / p.copula.nu).sqrt();
        for (a, b) in dt.v.iter().zip(&dn.v) {
            assert!((a * k - b).abs() < 1e-14);
        }
    }

    #[test]
    fn median_and_monotone_transform() {
        let model = PortfolioModel::new(reference_portfolio()).unwrap();
        let med = model.marginal(0).distribution().quantile(0.5).unwrap();
        assert!((model.log_ratio(0, 0.0).unwrap() - med).abs() < 1e-9);
        let mut prev = f64::NEG_INFINITY;
        for i in -60..=60 {
            let r = model.log_ratio(2, i as f64 * 0.25).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let model = PortfolioModel::new(reference_portfolio()).unwrap();
        let v = [0.4, 1.1, -0.3, 2.0, 0.9];
        let mut g = [0.0; 5];
        let c = model.concentration_gradient(&v, &mut g).unwrap();
        assert!((c - model.concentration_of(&v).unwrap()).abs() < 1e-12);
        for d in 0..5 {
            let h = 1e-5;
            let mut up = v;
            let mut dn = v;
            up[d] += h;
            dn[d] -= h;
            let fd = (model.concentration_of(&up).unwrap() - model.concentration_of(&dn).unwrap()) / (2.0 * h);
            assert!(((fd - g[d]) / g[d]).abs() < 1e-6, "d {d}: {fd} vs {}", g[d]);
        }
    }

    #[test]
    fn concentration_identities() {
        let p = reference_portfolio();
        assert!((portfolio_concentration(&p, &[0.0; 5]) - 100.0).abs() < 1e-12);
        assert_eq!(p.baseline(), portfolio_concentration(&p, &[0.0; 5]));
        let mut doubled = p.clone();
        doubled.cities.iter_mut().for_each(|c| c.weight *= 2.0);
        let r = [0.1, -0.2, 0.3, 0.0, 0.05];
        let a = portfolio_concentration(&p, &r);
        assert!((portfolio_concentration(&doubled, &r) - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn scaling_factor_identities() {
        let gh = reference_portfolio().cities[0].gh;
        let sd = gh_moments(&gh).unwrap().1.sqrt();
        assert!((scaling_factor(sd, &gh).unwrap() - 1.0).abs() < 1e-14);
        assert!((scaling_factor(2.0 * sd, &gh).unwrap() - 2.0).abs() < 1e-14);
        assert!(scaling_factor(0.0, &gh).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let p = reference_portfolio();
        let l = cholesky_factor(&p.copula.sigma).unwrap();
        let a = sample_copula(&p.copula, &l, &mut StreamRng::new(9, 2)).unwrap();
        let b = sample_copula(&p.copula, &l, &mut StreamRng::new(9, 2)).unwrap();
        assert_eq!(a, b);
    }
}

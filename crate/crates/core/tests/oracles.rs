//! Library values against independent references computed here: composite
//! Gauss-Legendre quadrature, bisection and brute force.

use airisk_core::copula::{cholesky_factor, PortfolioModel};
use airisk_core::estimators::{growth_direction, EstimatorKind, StratumSample, WeightedSample};
use airisk_core::ghdist::{GhDistribution, GhMarginal, GhParams};
use airisk_core::preset::reference_portfolio;
use airisk_core::statkit::{bessel_k, gamma_quantile_from_score, normal_cdf, normal_quantile, t_cdf, t_pdf, t_quantile, StreamRng};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

struct Quadrature {
    rule: Vec<(f64, f64)>,
}

impl Quadrature {
    fn new() -> Self {
        Self { rule: gauss_legendre(20) }
    }

    fn panel<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * self.rule.iter().map(|(x, w)| w * f(m + h * x)).sum::<f64>()
    }

    /// Panels growing geometrically away from `center` on both sides, out
    /// to `center ± reach`.
    fn graded<F: Fn(f64) -> f64>(&self, f: &F, center: f64, first: f64, reach: f64) -> f64 {
        self.one_sided(f, center, -1.0, first, reach) + self.one_sided(f, center, 1.0, first, reach)
    }

    /// Graded panels from `center` towards `center + side * reach`.
    fn one_sided<F: Fn(f64) -> f64>(&self, f: &F, center: f64, side: f64, first: f64, reach: f64) -> f64 {
        let (mut a, mut w, mut total) = (0.0, first, 0.0);
        while a < reach {
            let b = (a + w).min(reach);
            total += self.panel(&|t: f64| f(center + side * t), a, b);
            a = b;
            w *= 1.15;
        }
        total
    }

    fn over<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels).map(|k| self.panel(f, a + k as f64 * h, a + (k + 1) as f64 * h)).sum()
    }
}

fn rows() -> Vec<GhParams> {
    reference_portfolio().cities.iter().map(|c| c.gh).collect()
}

fn reach(p: &GhParams) -> f64 {
    50.0 / (p.alpha - p.beta.abs()) + 10.0 * p.delta
}

#[test]
fn gh_density_integrates_to_one() {
    let q = Quadrature::new();
    for p in rows() {
        let g = GhDistribution::new(p).unwrap();
        let total = q.graded(&|x| g.pdf(x), p.mu, 1e-6, reach(&p));
        assert!((total - 1.0).abs() < 1e-8, "{p:?}: {total}");
    }
}

#[test]
fn gh_moments_match_quadrature() {
    let q = Quadrature::new();
    for p in rows() {
        let g = GhDistribution::new(p).unwrap();
        let m1 = q.graded(&|x| x * g.pdf(x), p.mu, 1e-6, reach(&p));
        let m2 = q.graded(&|x| (x - m1) * (x - m1) * g.pdf(x), p.mu, 1e-6, reach(&p));
        assert!((g.mean() - m1).abs() < 1e-8, "{p:?}: {} vs {m1}", g.mean());
        assert!((g.variance() - m2).abs() < 1e-8 * m2, "{p:?}: {} vs {m2}", g.variance());
    }
}

#[test]
fn gh_cdf_matches_quadrature() {
    let q = Quadrature::new();
    for p in rows() {
        let g = GhDistribution::new(p).unwrap();
        let sd = g.variance().sqrt();
        for k in [-3.0, -1.0, -0.2, 0.0, 0.4, 2.0] {
            let x = g.mean() + k * sd;
            // the density is sharpest at μ, so panels grade away from it
            let f = |t: f64| g.pdf(t);
            let left = if x <= p.mu {
                q.one_sided(&f, x, -1.0, 1e-6 + (p.mu - x), reach(&p))
            } else {
                q.one_sided(&f, p.mu, -1.0, 1e-6, reach(&p)) + q.one_sided(&f, p.mu, 1.0, 1e-6, x - p.mu)
            };
            let c = g.cdf(x).unwrap();
            assert!((c - left).abs() < 1e-8, "{p:?} at {x}: {c} vs {left}");
        }
    }
}

#[test]
fn gh_quantile_round_trip() {
    let us: Vec<f64> = [1e-6, 1e-4, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.9999, 1.0 - 1e-6].to_vec();
    for p in rows() {
        let g = GhDistribution::new(p).unwrap();
        let m = GhMarginal::new(p).unwrap();
        for &u in &us {
            let x = g.quantile(u).unwrap();
            assert!((g.cdf(x).unwrap() - u).abs() <= 1e-8, "{p:?} u={u}");
            let y = m.quantile(u).unwrap();
            assert!((g.cdf(y).unwrap() - u).abs() <= 1e-8, "cache {p:?} u={u}");
        }
    }
}

#[test]
fn bessel_matches_integral_and_recurrence() {
    let q = Quadrature::new();
    for &nu in &[-2.7f64, -0.5, 0.0, 0.3, 1.0, 1.8041, 3.5] {
        for &x in &[0.05f64, 0.5, 1.0, 3.0, 10.0, 30.0] {
            // K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(ν t) dt
            let mut upper: f64 = 1.0;
            while x * upper.cosh() - nu.abs() * upper < 60.0 {
                upper += 0.5;
            }
            let oracle = q.over(&|t: f64| (-x * t.cosh()).exp() * (nu * t).cosh(), 0.0, upper, 400);
            let k = bessel_k(nu, x).unwrap();
            assert!(((k - oracle) / oracle).abs() < 1e-10, "K_{nu}({x}) = {k} vs {oracle}");
            let lhs = bessel_k(nu + 1.0, x).unwrap();
            let rhs = bessel_k(nu - 1.0, x).unwrap() + 2.0 * nu / x * k;
            assert!(((lhs - rhs) / lhs).abs() < 1e-8, "recurrence at ({nu}, {x})");
        }
    }
}

#[test]
fn cholesky_round_trip() {
    let sigma = reference_portfolio().copula.sigma;
    let l = cholesky_factor(&sigma).unwrap().rows();
    for i in 0..5 {
        for j in 0..5 {
            let v: f64 = (0..5).map(|k| l[i][k] * l[j][k]).sum();
            assert!((v - sigma[i][j]).abs() < 1e-12);
        }
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn t_distribution_against_quadrature_and_bisection() {
    let q = Quadrature::new();
    for &nu in &[1.0, 2.5, 11.78, 60.0] {
        for &x in &[-6.0f64, -1.5, 0.3, 2.0, 8.0] {
            // substitute t = tan θ to integrate over a finite interval
            let mass = q.over(&|th: f64| t_pdf(th.tan(), nu) / th.cos().powi(2), -std::f64::consts::FRAC_PI_2, x.atan(), 200);
            assert!((t_cdf(x, nu).unwrap() - mass).abs() < 1e-10, "t_cdf({x}, {nu})");
        }
        for &p in &[1e-6, 0.02, 0.5, 0.8, 0.999] {
            let x = bisect(|x| t_cdf(x, nu).unwrap() - p, -1e6, 1e6);
            assert!((t_quantile(p, nu).unwrap() - x).abs() < 1e-8 * x.abs().max(1.0), "t_quantile({p}, {nu})");
        }
    }
}

#[test]
fn normal_and_gamma_quantiles_against_bisection() {
    for &p in &[1e-10, 1e-3, 0.25, 0.5, 0.9, 1.0 - 1e-7] {
        let x = bisect(|x| normal_cdf(x).unwrap() - p, -40.0, 40.0);
        assert!((normal_quantile(p).unwrap() - x).abs() < 1e-9);
    }
    use statrs::function::gamma::gamma_lr;
    for &(shape, scale) in &[(5.89, 2.0), (5.89, 0.9), (0.7, 1.3)] {
        for &z in &[-4.0, -1.0, 0.0, 0.5, 3.0] {
            let p = normal_cdf(z).unwrap();
            let y = bisect(|y| gamma_lr(shape, y / scale) - p, 0.0, 500.0);
            let g = gamma_quantile_from_score(z, shape, scale).unwrap();
            assert!((g - y).abs() < 1e-9 * y.max(1e-3), "shape {shape} scale {scale} z {z}: {g} vs {y}");
        }
    }
}

#[test]
fn concentration_gradient_matches_differences() {
    let m = PortfolioModel::new(reference_portfolio()).unwrap();
    let v = [0.4, -0.3, 1.1, 0.2, -0.8];
    let mut g = [0.0; 5];
    m.concentration_gradient(&v, &mut g).unwrap();
    for d in 0..5 {
        let h = 1e-5;
        let (mut a, mut b) = (v, v);
        a[d] += h;
        b[d] -= h;
        let fd = (m.concentration_of(&a).unwrap() - m.concentration_of(&b).unwrap()) / (2.0 * h);
        assert!((fd - g[d]).abs() < 1e-5 * g[d].abs().max(1.0), "d={d}: {fd} vs {}", g[d]);
    }
}

#[test]
fn growth_direction_is_unit() {
    let m = PortfolioModel::new(reference_portfolio()).unwrap();
    let u = growth_direction(&m).unwrap();
    assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(u.iter().all(|&x| x > 0.0));
}

#[test]
fn tail_quantile_matches_brute_force() {
    let mut rng = StreamRng::new(4, 4);
    use rand::Rng;
    for _ in 0..50 {
        let strata: Vec<StratumSample> = (0..3)
            .map(|_| StratumSample {
                prob: 1.0 / 3.0,
                c: (0..20).map(|_| (rng.random::<f64>() * 10.0).round()).collect(),
                w: (0..20).map(|_| rng.random::<f64>() * 2.0).collect(),
            })
            .collect();
        let s = WeightedSample {
            estimator: EstimatorKind::Sis,
            strata,
        };
        for alpha in [0.01, 0.1, 0.3] {
            // smallest sampled level whose mass strictly above it is at most α
            let mass_above = |t: f64| -> f64 {
                s.strata
                    .iter()
                    .map(|st| st.prob / st.c.len() as f64 * st.c.iter().zip(&st.w).filter(|(c, _)| **c > t).map(|(_, w)| w).sum::<f64>())
                    .sum()
            };
            let mut levels: Vec<f64> = s.strata.iter().flat_map(|st| st.c.iter().copied()).collect();
            levels.sort_by(f64::total_cmp);
            let want = levels.iter().copied().find(|&t| mass_above(t) <= alpha + 1e-12);
            assert_eq!(s.tail_quantile(alpha), want, "alpha {alpha}");
        }
    }
}

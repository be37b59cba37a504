//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

// QUADPACK qk15 abscissae and weights, outermost node first.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 4000;

/// One 15-point Kronrod panel on `[a, b]`: (estimate, |K15 - G7|).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    est: f64,
    err: f64,
}

/// Integrate `f` over the finite interval `[a, b]` with globally adaptive
/// bisection of the worst panel until the summed Kronrod error estimate
/// meets `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("integrate", "interval must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (est, err) = gk15(&f, a, b);
    if !est.is_finite() {
        return Err(Error::domain("integrate", format!("integrand not finite on [{a}, {b}]")));
    }
    let mut panels = vec![Panel { lo: a, hi: b, est, err }];
    let mut total = est;
    let mut total_err = err;
    loop {
        // roundoff floor: Kronrod differences below ~50 ulp are noise
        let tol = abs_tol.max(rel_tol * total.abs()).max(50.0 * f64::EPSILON * total.abs());
        if total_err <= tol {
            break;
        }
        if panels.len() >= MAX_PANELS {
            if total_err <= 1e3 * tol {
                break;
            }
            return Err(Error::Convergence {
                what: "adaptive quadrature",
                iterations: MAX_PANELS,
                trace: vec![total, total_err],
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.err > acc.1 { (i, p.err) } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        let (e1, r1) = gk15(&f, p.lo, mid);
        let (e2, r2) = gk15(&f, mid, p.hi);
        if !(e1.is_finite() && e2.is_finite()) {
            return Err(Error::domain("integrate", format!("integrand not finite on [{}, {}]", p.lo, p.hi)));
        }
        panels.push(Panel { lo: p.lo, hi: mid, est: e1, err: r1 });
        panels.push(Panel { lo: mid, hi: p.hi, est: e2, err: r2 });
        total = panels.iter().map(|p| p.est).sum();
        total_err = panels.iter().map(|p| p.err).sum();
    }
    // sum small panels first
    let mut parts: Vec<f64> = panels.iter().map(|p| p.est).collect();
    parts.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    Ok(parts.into_iter().sum())
}

/// Integrate `f` over `[a, ∞)` for an integrand with (at least)
/// exponentially decaying tail. Panels grow geometrically from `step`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, step: f64, rel_tol: f64) -> Result<f64> {
    tail_sum(&f, a, step, 1.0, rel_tol)
}

/// Integrate `f` over `(-∞, b]`.
pub fn integrate_from_neg_infinity<F: Fn(f64) -> f64>(f: F, b: f64, step: f64, rel_tol: f64) -> Result<f64> {
    tail_sum(&f, b, step, -1.0, rel_tol)
}

fn tail_sum<F: Fn(f64) -> f64>(f: &F, start: f64, step: f64, dir: f64, rel_tol: f64) -> Result<f64> {
    let mut lo = start;
    let mut width = step;
    let mut parts = Vec::new();
    let mut total: f64 = 0.0;
    let mut quiet = 0;
    for _ in 0..200 {
        let hi = lo + dir * width;
        let (a, b) = if dir > 0.0 { (lo, hi) } else { (hi, lo) };
        let part = integrate(f, a, b, 1e-3 * rel_tol * total.abs(), rel_tol)?;
        parts.push(part);
        total += part;
        if part.abs() <= 1e-3 * rel_tol * total.abs() || (total == 0.0 && width > 1e3) {
            quiet += 1;
            if quiet >= 2 {
                parts.reverse();
                return Ok(parts.into_iter().sum());
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 1.5;
    }
    Err(Error::Convergence {
        what: "semi-infinite quadrature",
        iterations: 200,
        trace: vec![total],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_exact_for_degree_22() {
        // ∫_0^1 x^22 = 1/23
        let (k, _) = gk15(&|x: f64| x.powi(22), 0.0, 1.0);
        assert!((k - 1.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_part_exact_for_degree_13() {
        // error estimate vanishes when both rules are exact
        let (k, e) = gk15(&|x: f64| x.powi(13) + 3.0 * x.powi(6), -1.0, 2.0);
        let exact = (2f64.powi(14) - 1.0) / 14.0 + 3.0 * (2f64.powi(7) + 1.0) / 7.0;
        assert!((k - exact).abs() < 1e-11);
        assert!(e < 1e-10);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let v = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-13, 1e-13).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!(((v - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite_exponential() {
        let v = integrate_to_infinity(|x: f64| (-x).exp(), 2.0, 1.0, 1e-14).unwrap();
        assert!(((v - (-2f64).exp()) / (-2f64).exp()).abs() < 1e-13);
        let w = integrate_from_neg_infinity(|x: f64| (-x * x).exp(), 0.0, 1.0, 1e-14).unwrap();
        assert!((w - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }
}

//! Modified Bessel function of the second kind, real order.
//!
//! Temme's series for `x < 2`, Steed's continued fraction (CF2) otherwise,
//! each at the reduced order `mu = nu - round(nu)`; the target order is then
//! reached with the (stable) upward recurrence
//! `K_{m+1} = K_{m-1} + (2m/x) K_m`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

// Power series 1/Γ(z) = Σ c_k z^k (Abramowitz & Stegun 6.1.34); only the
// even-index coefficients c_2, c_4, ..., c_26 are needed here.
const RGAM_EVEN: [f64; 13] = [
    0.577_215_664_901_532_9,
    -0.042_002_635_034_095_2,
    -0.042_197_734_555_544_3,
    0.007_218_943_246_663_0,
    -0.000_215_241_674_114_9,
    -0.000_020_134_854_780_7,
    0.000_001_133_027_232_0,
    0.000_000_006_116_095_0,
    -0.000_000_001_181_274_6,
    0.000_000_000_007_782_3,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_000_1,
];

/// `(1/Γ(1-mu) - 1/Γ(1+mu)) / (2 mu)`, without cancellation near 0.
fn temme_gam1(mu: f64) -> f64 {
    let m2 = mu * mu;
    -RGAM_EVEN.iter().rev().fold(0.0, |acc, &c| acc * m2 + c)
}

/// `e^x K_nu(x)` for `x > 0`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("bessel_k", format!("argument {x} must be positive and finite")));
    }
    if !nu.is_finite() {
        return Err(Error::domain("bessel_k", format!("order {nu} must be finite")));
    }
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let gampl = 1.0 / gamma(1.0 + mu);
        let gammi = 1.0 / gamma(1.0 - mu);
        let gam1 = temme_gam1(mu);
        let gam2 = 0.5 * (gammi + gampl);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                what: "bessel_k Temme series",
                iterations: MAX_ITER,
                trace: vec![sum],
            });
        }
        let scale = x.exp();
        (sum * scale, sum1 * xi2 * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                what: "bessel_k continued fraction",
                iterations: MAX_ITER,
                trace: vec![s],
            });
        }
        h *= a1;
        let k = (PI / (2.0 * x)).sqrt() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };

    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    Ok(k_mu)
}

/// `K_nu(x)`, the modified Bessel function of the second kind.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)? * (-x).exp())
}

/// `ln K_nu(x)`; finite where `K_nu(x)` itself would underflow.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)?.ln() - x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn gam1_series_matches_direct_difference() {
        for &mu in &[0.5f64, 0.4, -0.35, 0.25] {
            let direct = (1.0 / gamma(1.0 - mu) - 1.0 / gamma(1.0 + mu)) / (2.0 * mu);
            assert!((temme_gam1(mu) - direct).abs() < 1e-14, "mu {mu}");
        }
        assert!((temme_gam1(0.0) + 0.577_215_664_901_532_9).abs() < 1e-16);
    }

    #[test]
    fn half_integer_closed_forms() {
        for &x in &[0.01, 0.5, 1.9, 2.0, 2.1, 7.0, 40.0] {
            let base = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!(rel(bessel_k(0.5, x).unwrap(), base) < 1e-13, "x {x}");
            assert!(rel(bessel_k(1.5, x).unwrap(), base * (1.0 + 1.0 / x)) < 1e-13);
            let k52 = base * (1.0 + 3.0 / x + 3.0 / (x * x));
            assert!(rel(bessel_k(2.5, x).unwrap(), k52) < 1e-13);
        }
        let v = bessel_k(0.5, 2.0).unwrap();
        assert!((v - 0.119_937_771_968_061_4).abs() < 1e-12);
    }

    #[test]
    fn reference_values() {
        // K_0(1), K_1(1), K_0(0.1) to 16 digits
        assert!(rel(bessel_k(0.0, 1.0).unwrap(), 0.421_024_438_240_708_3) < 1e-14);
        assert!(rel(bessel_k(1.0, 1.0).unwrap(), 0.601_907_230_197_234_6) < 1e-14);
        assert!(rel(bessel_k(0.0, 0.1).unwrap(), 2.427_069_024_702_017) < 1e-14);
    }

    #[test]
    fn symmetric_in_order() {
        assert_eq!(bessel_k(-0.7, 1.3).unwrap(), bessel_k(0.7, 1.3).unwrap());
    }

    #[test]
    fn recurrence_holds() {
        for &nu in &[-4.2, -1.0, -0.3, 0.0, 0.45, 1.8, 3.3] {
            for &x in &[0.02, 0.6, 1.99, 2.01, 5.0, 30.0, 50.0] {
                let lhs = bessel_k(nu + 1.0, x).unwrap();
                let rhs = bessel_k(nu - 1.0, x).unwrap() + 2.0 * nu / x * bessel_k(nu, x).unwrap();
                assert!(rel(lhs, rhs) < 1e-10, "nu {nu} x {x}");
            }
        }
    }

    #[test]
    fn log_survives_underflow() {
        let l = ln_bessel_k(1.2, 1000.0).unwrap();
        assert!(l.is_finite() && l < -1000.0 + 1.0);
        assert_eq!(bessel_k(1.2, 1000.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_argument() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -1.0).is_err());
    }
}

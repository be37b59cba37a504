//! Built-in portfolios.

use crate::copula::{City, CityPortfolio, CopulaFamily, CopulaSpec};
use crate::ghdist::GhParams;

/// Five cities of the Beijing–Tianjin–Hebei area with fitted GH marginals,
/// a t-copula with 11.78 degrees of freedom, population-share weights,
/// `PM⁰ = 100` and unit scaling.
pub fn reference_portfolio() -> CityPortfolio {
    let rows: [(&str, f64, [f64; 5]); 5] = [
        ("Beijing", 0.4132, [0.1894, 2.4296, 0.7561, -1.0516, 0.5075]),
        ("Tianjin", 0.2726, [1.8041, 3.3702, 0.0066, -0.8673, 0.2959]),
        ("Chengde", 0.0732, [1.1848, 6.4420, 0.5492, -4.0233, 0.7318]),
        ("Hengshui", 0.0914, [1.7675, 4.8022, 0.4498, -1.7954, 0.4339]),
        ("Xingtai", 0.1496, [2.0100, 3.9889, 0.0500, -1.0875, 0.3041]),
    ];
    let cities = rows
        .iter()
        .map(|&(name, weight, [lambda, alpha, delta, beta, mu])| City {
            name: name.to_string(),
            weight,
            pm0: 100.0,
            scale: 1.0,
            gh: GhParams {
                lambda,
                alpha,
                delta,
                beta,
                mu,
            },
        })
        .collect();
    let sigma = vec![
        vec![1.000, 0.710, 0.744, 0.487, 0.577],
        vec![0.710, 1.000, 0.549, 0.709, 0.623],
        vec![0.744, 0.549, 1.000, 0.382, 0.463],
        vec![0.487, 0.709, 0.382, 1.000, 0.729],
        vec![0.577, 0.623, 0.463, 0.729, 1.000],
    ];
    CityPortfolio {
        copula: CopulaSpec {
            family: CopulaFamily::T,
            nu: 11.78,
            sigma,
        },
        cities,
    }
}

/// Look up a preset by name.
pub fn preset(name: &str) -> Option<CityPortfolio> {
    match name {
        "paper" => Some(reference_portfolio()),
        _ => None,
    }
}

//! Portfolio pollution risk engine.
//!
//! Daily PM2.5 log-ratios of a set of cities are modelled with generalized
//! hyperbolic marginals joined by a normal or t copula. The portfolio
//! concentration `C = Σ w_d PM⁰_d exp(r_d)` is then simulated with naive
//! Monte Carlo, importance sampling or stratified importance sampling to get
//! exceeding probabilities, conditional excesses, CaR and CCaR.

pub mod calibration;
pub mod copula;
pub mod error;
pub mod estimators;
pub mod ghdist;
pub mod io;
pub mod preset;
pub mod risk;
pub mod statkit;

pub use copula::{City, CityPortfolio, CopulaFamily, CopulaSpec, PortfolioModel};
pub use error::{Error, Result};
pub use estimators::{EstimateResult, EstimatorKind};
pub use ghdist::GhParams;
pub use risk::{RiskQuery, RiskReport};

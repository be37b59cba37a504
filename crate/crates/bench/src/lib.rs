//! Shared fixtures for the criterion benches.

use airisk_core::preset::reference_portfolio;
use airisk_core::PortfolioModel;

pub fn reference_model() -> PortfolioModel {
    PortfolioModel::new(reference_portfolio()).expect("reference portfolio is valid")
}

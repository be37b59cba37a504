//! Special functions and univariate distribution primitives.

mod bessel;
mod dist;
pub mod quad;
mod rng;

pub use bessel::{bessel_k, bessel_k_scaled, ln_bessel_k};
pub use dist::{
    gamma_pdf, gamma_quantile_from_score, normal_cdf, normal_pdf, normal_quantile, normal_quantile_upper,
    normal_sf, sample_gamma,
    t_cdf, t_ln_pdf, t_pdf, t_quantile, t_sf, GammaSampler,
};
pub use rng::StreamRng;

//! Potentials, specifications, exact torus Gibbs measures and
//! one-dimensional infinite-volume marginals.

mod measure;
mod potential;
mod spec;
mod transfer;

pub use measure::{
    beta_mixing_bound, dlr_residual, exact_gibbs, log_ratio_bound_check, nonnull_delta,
    pushforward_density_residual, LogRatioCheck, TorusMeasure, MAX_EXACT_STATES,
};
pub use potential::{Potential, Term};
pub use spec::Specification;
pub use transfer::{transfer_marginal_1d, MarkovChain1d};

/// Builds the specification of `pot` on `torus`.
pub fn build_specification(pot: &Potential, torus: &crate::lattice::Torus) -> crate::error::Result<Specification> {
    Specification::new(pot, torus)
}

//! Relative entropy dynamics for interacting particle systems on finite tori.

pub mod ctmc;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod gibbs;
pub mod lattice;
pub mod montecarlo;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

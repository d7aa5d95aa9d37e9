//! Ensemble qubits stabilized by engineered two-atom decay.
//!
//! The crate builds the degenerate-parametric-amplifier + spin-ensemble
//! model at four levels of description, integrates the resulting Lindblad
//! master equations, and provides the analytic cross-checks (conserved
//! quantities, effective rates, avoided crossings) used to validate them.

pub mod error;
pub mod broadening;
pub mod dynamics;
pub mod effective;
pub mod hilbert;
pub mod manifold;
pub mod model;
pub mod spectrum;

pub use error::{Error, Result};

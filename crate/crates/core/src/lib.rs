//! Path-integral Monte Carlo for 1D stoquastic spin chains.
//!
//! The crate maps a quantum chain at inverse temperature `beta` onto an
//! `L x n` lattice of classical spins, samples that lattice with a lazy
//! single-site Metropolis chain, and turns the samples into partition
//! function and observable estimates. Small systems can be checked against
//! the exact results in [`oracle`].

pub mod chain;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mapping;
pub mod models;
pub mod observables;
pub mod oracle;
pub mod report;

pub use error::{Error, Result};

//! Davies generators for finite-dimensional Hamiltonians, their quantum and
//! embedded-classical spectral gaps, and arithmetic-progression checks on
//! spectra.

pub mod error;
pub mod linalg;
pub mod operators;
pub mod spectral;
pub mod davies;
pub mod gaps;
pub mod classical;
pub mod harness;

pub use error::{Error, Result};

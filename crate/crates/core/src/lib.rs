//! Quenched compound-Poisson return-time statistics for random piecewise-linear
//! expanding interval maps.
//!
//! The pipeline runs from exact maps and shrinking targets, through cluster
//! quantities and the extremal-index function, to the limiting compound-Poisson
//! law, and cross-checks it against transfer-operator spectra and Monte Carlo
//! orbit counts.

pub mod checker;
pub mod cpmodel;
pub mod driving;
pub mod ei;
pub mod error;
pub mod intervals;
pub mod maps;
pub mod scalar;
pub mod sim;
pub mod spectral;
pub mod targets;

pub use error::{Error, Result};

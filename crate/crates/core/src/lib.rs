//! Simulation of frequency-degenerate multi-photon polarization states from
//! a dual-pump SFWM source: Fock-space algebra, polarization optics, source
//! physics, threshold-detector measurement and maximum-likelihood
//! tomography.

pub mod detection;
pub mod error;
pub mod fit;
pub mod fock;
pub mod polarization;
pub mod source;
pub mod tomography;

pub use error::{Error, Result};

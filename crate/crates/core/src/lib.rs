//! Simulation and characterization toolkit for a superconducting qutrit.

pub mod algebra;
pub mod analysis;
pub mod benchmarking;
pub mod calibration;
pub mod clifford;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod integrate;
pub mod metrology;
pub mod synthesis;
pub mod tomography;

pub use error::{Error, Result};

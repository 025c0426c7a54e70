//! Simulation and verification of a remote-spectrometer protocol built on
//! frequency-anticorrelated photon pairs.
//!
//! One station holds an unknown spectral sample and a broadband detector; the
//! other scans a monochromator across the conjugate band. Because pair
//! frequencies sum to the pump frequency, the coincidence rate as a function
//! of monochromator setting traces the sample spectrum reversed about
//! degeneracy, which this crate models twice over: an analytic engine that
//! evaluates the two-photon amplitude directly, and a Monte Carlo engine that
//! emulates detectors, free-running clocks, and time-tag post-processing.

pub mod coincidence;
pub mod config;
pub mod error;
pub mod instruments;
pub mod montecarlo;
pub mod scan;
pub mod spectra;
pub mod timetag;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scan::{Reconstruction, ScanCurve, ScanPoint, ScanRun};
pub use spectra::{
    conjugate_wavelength, lambda_nm_from_omega, omega_from_lambda_nm, FrequencyGrid, Shape,
    SpectralFunction, TwoPhotonWavefunction,
};
pub use timetag::{ClockModel, DetectorId, EventStream};

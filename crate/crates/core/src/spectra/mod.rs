//! Spectral model: line shapes, detuning grids, and the two-photon amplitude.

mod function;
mod grid;
mod psi;

pub use function::{Shape, SpectralFunction, Table};
pub use grid::{FrequencyGrid, MAX_GRID_POINTS};
pub use psi::{
    compute_psi, coincidence_rate_analytic, DispersiveMedium, TwoPhotonWavefunction,
    ALIASING_EDGE_LIMIT, PARSEVAL_TOLERANCE,
};

#[cfg(test)]
pub(crate) use psi::fwhm_of;

use crate::error::{Error, Result};

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const TWO_PI_C: f64 = 2.0 * core::f64::consts::PI * SPEED_OF_LIGHT;

/// Angular frequency (rad/s) of a vacuum wavelength in nm.
pub fn omega_from_lambda_nm(lambda_nm: f64) -> Result<f64> {
    if !(lambda_nm > 0.0) || !lambda_nm.is_finite() {
        return Err(Error::domain(format!(
            "wavelength {lambda_nm} nm must be positive finite"
        )));
    }
    Ok(TWO_PI_C / (lambda_nm * 1e-9))
}

/// Vacuum wavelength (nm) of an angular frequency in rad/s.
pub fn lambda_nm_from_omega(omega: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::domain(format!(
            "angular frequency {omega} rad/s must be positive finite"
        )));
    }
    Ok(TWO_PI_C / omega * 1e9)
}

/// Convert a wavelength interval (nm) around `center_nm` into an angular
/// frequency interval (rad/s) by local linearization.
pub fn bandwidth_rad_s(fwhm_nm: f64, center_nm: f64) -> Result<f64> {
    if !(fwhm_nm > 0.0) || !fwhm_nm.is_finite() {
        return Err(Error::domain(format!(
            "bandwidth {fwhm_nm} nm must be positive finite"
        )));
    }
    if !(center_nm > 0.0) || !center_nm.is_finite() {
        return Err(Error::domain(format!(
            "center {center_nm} nm must be positive finite"
        )));
    }
    let center_m = center_nm * 1e-9;
    Ok(TWO_PI_C * fwhm_nm * 1e-9 / (center_m * center_m))
}

/// Wavelength of the partner photon under pump energy conservation:
/// `1/lambda_conj = 1/lambda_pump - 1/lambda_one`. Requires
/// `0 < lambda_pump < lambda_one` so that the partner is physical.
pub fn conjugate_wavelength(lambda_pump_nm: f64, lambda_one_nm: f64) -> Result<f64> {
    if !(lambda_pump_nm > 0.0) || !lambda_pump_nm.is_finite() {
        return Err(Error::domain(format!(
            "pump wavelength {lambda_pump_nm} nm must be positive finite"
        )));
    }
    if !(lambda_one_nm > lambda_pump_nm) || !lambda_one_nm.is_finite() {
        return Err(Error::domain(format!(
            "photon wavelength {lambda_one_nm} nm must exceed the pump ({lambda_pump_nm} nm)"
        )));
    }
    Ok(1.0 / (1.0 / lambda_pump_nm - 1.0 / lambda_one_nm))
}

//! Effective two-photon wavefunction in the arrival-time difference.
//!
//! The frequency-domain amplitude is the product of the pair spectrum, the
//! remote filter at the signal frequency, the monochromator response at the
//! idler frequency, and the quadratic dispersion phase accumulated over both
//! arms. Its Fourier transform over the detuning gives the amplitude in the
//! delay `tau`; the coincidence profile is its squared magnitude.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spectra::{FrequencyGrid, SpectralFunction};

/// Largest tolerated edge-to-peak magnitude ratio of the spectral product.
/// Above this the discrete transform would wrap energy around the grid.
pub const ALIASING_EDGE_LIMIT: f64 = 1e-6;

/// Relative tolerance on the internal Parseval consistency check.
pub const PARSEVAL_TOLERANCE: f64 = 1e-9;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// One dispersive propagation path.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersiveMedium {
    /// Inverse group velocity, s/m.
    pub inverse_group_velocity: f64,
    /// Group-velocity dispersion k'', s^2/m.
    pub gvd: f64,
    /// Physical length, m.
    pub length: f64,
}

impl DispersiveMedium {
    pub fn new(inverse_group_velocity: f64, gvd: f64, length: f64) -> Result<Self> {
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::domain(format!("medium length {length} must be >= 0")));
        }
        if !inverse_group_velocity.is_finite() || !gvd.is_finite() {
            return Err(Error::domain("medium parameters must be finite"));
        }
        Ok(DispersiveMedium {
            inverse_group_velocity,
            gvd,
            length,
        })
    }

    /// Zero-length path: no delay, no dispersion.
    pub fn vacuum() -> Self {
        DispersiveMedium {
            inverse_group_velocity: 1.0 / crate::spectra::SPEED_OF_LIGHT,
            gvd: 0.0,
            length: 0.0,
        }
    }

    /// First-order group delay over the path, s.
    pub fn group_delay(&self) -> f64 {
        self.inverse_group_velocity * self.length
    }

    /// Accumulated quadratic-phase coefficient k'' * length, s^2.
    pub fn quadratic_phase(&self) -> f64 {
        self.gvd * self.length
    }
}

/// Sampled `psi(tau)` with its squared magnitude and bookkeeping integrals.
#[derive(Clone, Debug)]
pub struct TwoPhotonWavefunction {
    tau_step: f64,
    psi: Vec<Complex64>,
    g2: Vec<f64>,
    g2_integral: f64,
    spectral_integral: f64,
}

impl TwoPhotonWavefunction {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn tau_step(&self) -> f64 {
        self.tau_step
    }

    /// Delay of sample `k`; the grid is centered on `tau = 0`.
    pub fn tau(&self, k: usize) -> f64 {
        (k as f64 - (self.psi.len() / 2) as f64) * self.tau_step
    }

    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.psi.len()).map(move |k| self.tau(k))
    }

    pub fn psi(&self) -> &[Complex64] {
        &self.psi
    }

    /// Coincidence profile `|psi|^2`.
    pub fn g2(&self) -> &[f64] {
        &self.g2
    }

    /// `sum g2 dtau`, the delay-integrated coincidence signal.
    pub fn g2_integral(&self) -> f64 {
        self.g2_integral
    }

    /// `sum |A(nu)|^2 dnu` of the frequency-domain product; equals
    /// [`Self::g2_integral`] to within [`PARSEVAL_TOLERANCE`].
    pub fn spectral_integral(&self) -> f64 {
        self.spectral_integral
    }

    /// FWHM of `g2` by linear interpolation around its maximum. `None` when
    /// the profile has no interior half-maximum crossings.
    pub fn g2_fwhm(&self) -> Option<f64> {
        fwhm_of(&self.g2, self.tau_step)
    }
}

pub(crate) fn fwhm_of(values: &[f64], step: f64) -> Option<f64> {
    let (imax, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak <= 0.0 {
        return None;
    }
    let half = peak / 2.0;
    let mut left = None;
    for i in (1..=imax).rev() {
        if values[i - 1] < half && values[i] >= half {
            let t = (half - values[i - 1]) / (values[i] - values[i - 1]);
            left = Some((i - 1) as f64 + t);
            break;
        }
    }
    let mut right = None;
    for i in imax..values.len() - 1 {
        if values[i] >= half && values[i + 1] < half {
            let t = (values[i] - half) / (values[i] - values[i + 1]);
            right = Some(i as f64 + t);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Some((r - l) * step),
        _ => None,
    }
}

/// Evaluate the two-photon amplitude on the delay grid conjugate to `grid`.
///
/// `phi` is sampled at the detuning, `f` at the signal frequency, and
/// `pi_response` (a profile centered at zero) at the idler frequency relative
/// to the monochromator setting `omega_m`. The dispersion phase depends only
/// on the summed k''*length of the two arms, which is what makes opposite
/// arms cancel.
///
/// The product must have decayed at the grid edges; otherwise the transform
/// would alias and an [`Error::Aliasing`] is returned.
pub fn compute_psi(
    grid: &FrequencyGrid,
    phi: &SpectralFunction,
    f: &SpectralFunction,
    pi_response: &SpectralFunction,
    omega_m: f64,
    medium_signal: &DispersiveMedium,
    medium_idler: &DispersiveMedium,
) -> Result<TwoPhotonWavefunction> {
    let n = grid.len();
    let dnu = grid.spacing();
    let quad = medium_signal.quadratic_phase() + medium_idler.quadratic_phase();

    let mut amps: Vec<Complex64> = Vec::with_capacity(n);
    for j in 0..n {
        let nu = grid.nu(j);
        let a = phi.value(nu)
            * f.value(grid.omega_s0() + nu)
            * pi_response.value(grid.omega_i0() - nu - omega_m);
        let a = if quad == 0.0 {
            a
        } else {
            a * Complex64::from_polar(1.0, -quad * nu * nu / 2.0)
        };
        amps.push(a);
    }

    let peak_sq = amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    if peak_sq > 0.0 {
        let edge_sq = amps[0].norm_sqr().max(amps[n - 1].norm_sqr());
        let edge_ratio = (edge_sq / peak_sq).sqrt();
        if edge_ratio >= ALIASING_EDGE_LIMIT {
            return Err(Error::Aliasing {
                edge_ratio,
                limit: ALIASING_EDGE_LIMIT,
            });
        }
    }

    let spectral_integral: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * dnu;

    // psi(tau_k) = dnu/sqrt(2 pi) * sum_j a_j exp(-i nu_j tau_k) with
    // tau_k = (k - n/2) * 2 pi / (n dnu). Folding nu_j = nu_0 + j dnu into
    // the DFT phase leaves a (-1)^j twiddle and a global phase per k.
    let mut buf: Vec<Complex64> = amps
        .iter()
        .enumerate()
        .map(|(j, a)| if j % 2 == 0 { *a } else { -*a })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let tau_step = 2.0 * core::f64::consts::PI / (n as f64 * dnu);
    let nu0 = grid.nu(0);
    let scale = dnu / SQRT_2PI;
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let tau = (k as f64 - (n / 2) as f64) * tau_step;
        psi[k] = buf[k] * Complex64::from_polar(scale, -nu0 * tau);
    }

    let g2: Vec<f64> = psi.iter().map(|p| p.norm_sqr()).collect();
    let g2_integral = g2.iter().sum::<f64>() * tau_step;

    debug_assert!(
        spectral_integral == 0.0
            || ((g2_integral - spectral_integral) / spectral_integral).abs() < PARSEVAL_TOLERANCE,
        "Parseval drift: tau-side {g2_integral:.15e} vs nu-side {spectral_integral:.15e}"
    );

    Ok(TwoPhotonWavefunction {
        tau_step,
        psi,
        g2,
        g2_integral,
        spectral_integral,
    })
}

/// Narrowband coincidence rate: the pair spectrum at the detuning selected by
/// the monochromator times the remote filter at the conjugate frequency,
/// both in intensity. This is the limit of the delay-integrated `g2` per unit
/// of the response's integrated intensity as the response narrows.
pub fn coincidence_rate_analytic(
    phi: &SpectralFunction,
    f: &SpectralFunction,
    omega_m: f64,
    omega_p: f64,
    omega_i0: f64,
) -> f64 {
    phi.intensity(omega_i0 - omega_m) * f.intensity(omega_p - omega_m)
}

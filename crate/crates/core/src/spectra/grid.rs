//! Detuning grid shared by the transform engine and the samplers.

use crate::error::{Error, Result};
use crate::spectra::SpectralFunction;

/// Largest grid the automatic sizing rule will build.
pub const MAX_GRID_POINTS: usize = 1 << 22;

/// Symmetric detuning grid around `nu = 0`, where `nu` measures the signal
/// offset from `omega_s0` and, with opposite sign, the idler offset from
/// `omega_i0`. Energy conservation ties the two origins to the pump:
/// `omega_s0 + omega_i0 = omega_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    omega_s0: f64,
    omega_i0: f64,
    span: f64,
    n: usize,
}

impl FrequencyGrid {
    /// `n_points` must be a power of two (>= 2) so the transform stage can
    /// run a radix-2 FFT without padding surprises.
    pub fn new(omega_s0: f64, omega_i0: f64, span: f64, n_points: usize) -> Result<Self> {
        if !(omega_s0 > 0.0) || !(omega_i0 > 0.0) {
            return Err(Error::grid("central frequencies must be > 0"));
        }
        if !(span > 0.0) || !span.is_finite() {
            return Err(Error::grid(format!("span {span} must be positive finite")));
        }
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::grid(format!(
                "n_points {n_points} must be a power of two >= 2"
            )));
        }
        Ok(FrequencyGrid {
            omega_s0,
            omega_i0,
            span,
            n: n_points,
        })
    }

    /// Size a grid for a set of profiles: span at least 8x the widest FWHM,
    /// spacing fine enough to put at least 16 points across the narrowest.
    /// Profiles with unbounded FWHM (edges, open channels) put no constraint
    /// on the span.
    pub fn for_functions(
        omega_s0: f64,
        omega_i0: f64,
        functions: &[&SpectralFunction],
    ) -> Result<Self> {
        let widths: Vec<f64> = functions
            .iter()
            .map(|f| f.fwhm())
            .filter(|w| w.is_finite() && *w > 0.0)
            .collect();
        if widths.is_empty() {
            return Err(Error::grid(
                "no profile with a finite width; give an explicit span instead",
            ));
        }
        let widest = widths.iter().cloned().fold(0.0, f64::max);
        let narrowest = widths.iter().cloned().fold(f64::INFINITY, f64::min);
        let span = 8.0 * widest;
        let max_spacing = narrowest / 16.0;
        let needed = (span / max_spacing).ceil() as usize + 1;
        let n = needed.next_power_of_two();
        if n > MAX_GRID_POINTS {
            return Err(Error::grid(format!(
                "sizing rule needs {n} points (cap {MAX_GRID_POINTS}); the width ratio \
                 {widest:.3e}/{narrowest:.3e} is too large for one grid"
            )));
        }
        FrequencyGrid::new(omega_s0, omega_i0, span, n.max(2))
    }

    pub fn omega_s0(&self) -> f64 {
        self.omega_s0
    }

    pub fn omega_i0(&self) -> f64 {
        self.omega_i0
    }

    pub fn omega_p(&self) -> f64 {
        self.omega_s0 + self.omega_i0
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing, `span / (n_points - 1)`; both endpoints lie on the grid.
    pub fn spacing(&self) -> f64 {
        self.span / (self.n - 1) as f64
    }

    /// Detuning of point `j`. Written so that `nu(j) == -nu(n-1-j)` holds
    /// bit-for-bit, keeping the grid exactly symmetric about zero.
    pub fn nu(&self, j: usize) -> f64 {
        debug_assert!(j < self.n);
        let half_step = self.spacing() / 2.0;
        (2.0 * j as f64 - (self.n - 1) as f64) * half_step
    }

    pub fn detunings(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.nu(j))
    }
}

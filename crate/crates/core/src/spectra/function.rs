//! Complex spectral amplitude profiles over angular frequency.
//!
//! A [`SpectralFunction`] models any of the line shapes that enter the
//! two-photon amplitude: the pair spectrum, a bandpass filter in the remote
//! arm, or a monochromator response. Values are complex field amplitudes;
//! intensity transmission is `|value|^2`.

use std::io::Read;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// ln(2), used by the FWHM-parameterized Gaussian.
const LN2: f64 = core::f64::consts::LN_2;

/// Positive root of sinc(x) = 1/2, bracketing the main lobe half-maximum.
const SINC_HALF_MAX_X: f64 = 1.895_494_267_033_980_9;

/// Unnormalized sinc, sin(x)/x with sinc(0) = 1.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Line-shape kind plus any kind-specific parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// `peak * exp(-4 ln2 (w - c)^2 / width^2)`; `width` is the amplitude FWHM.
    Gaussian,
    /// `peak` on the closed interval `[c - width/2, c + width/2]`, zero outside.
    Rectangle,
    /// `peak * sinc(gvm * length * (w - c) / 2)`, the phase-matching profile of
    /// a crystal of the given length with group-velocity mismatch `gvm` (s/m).
    SincPhaseMatching { gvm: f64, crystal_length: f64 },
    /// Step at `c`. With `rising` the function is `peak` for `w >= c`
    /// (passes the high-frequency, short-wavelength side), otherwise `peak`
    /// for `w <= c`.
    Edge { rising: bool },
    /// Piecewise-linear interpolation of measured points, zero outside the
    /// tabulated range.
    Tabulated(Table),
}

/// Strictly increasing abscissae (rad/s) with complex amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    omegas: Vec<f64>,
    values: Vec<Complex64>,
}

impl Table {
    pub fn new(omegas: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if omegas.len() != values.len() {
            return Err(Error::domain("tabulated: abscissa/value length mismatch"));
        }
        if omegas.len() < 2 {
            return Err(Error::domain("tabulated: need at least two points"));
        }
        if !omegas.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain(
                "tabulated: abscissae must be strictly increasing",
            ));
        }
        if omegas[0] <= 0.0 || !omegas.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("tabulated: abscissae must be positive finite"));
        }
        if !values.iter().all(|v| v.norm() <= 1.0 + 1e-12 && v.is_finite()) {
            return Err(Error::domain(
                "tabulated: amplitudes must satisfy |value| <= 1",
            ));
        }
        Ok(Table { omegas, values })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    fn value_at(&self, omega: f64) -> Complex64 {
        let n = self.omegas.len();
        if omega < self.omegas[0] || omega > self.omegas[n - 1] {
            return Complex64::new(0.0, 0.0);
        }
        let hi = self.omegas.partition_point(|&x| x < omega).min(n - 1);
        if hi == 0 {
            return self.values[0];
        }
        let lo = hi - 1;
        let t = (omega - self.omegas[lo]) / (self.omegas[hi] - self.omegas[lo]);
        self.values[lo] * (1.0 - t) + self.values[hi] * t
    }

    fn peak(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Outermost half-maximum crossings of |value|, linearly interpolated.
    fn fwhm(&self) -> f64 {
        let peak = self.peak();
        if peak == 0.0 {
            return 0.0;
        }
        let half = peak / 2.0;
        let mags: Vec<f64> = self.values.iter().map(|v| v.norm()).collect();
        let n = mags.len();
        let mut left = self.omegas[0];
        for i in 0..n - 1 {
            if mags[i] < half && mags[i + 1] >= half {
                let t = (half - mags[i]) / (mags[i + 1] - mags[i]);
                left = self.omegas[i] + t * (self.omegas[i + 1] - self.omegas[i]);
                break;
            }
        }
        let mut right = self.omegas[n - 1];
        for i in (0..n - 1).rev() {
            if mags[i + 1] < half && mags[i] >= half {
                let t = (half - mags[i + 1]) / (mags[i] - mags[i + 1]);
                right = self.omegas[i + 1] - t * (self.omegas[i + 1] - self.omegas[i]);
                break;
            }
        }
        right - left
    }
}

/// A complex spectral amplitude with `|value| <= peak_amplitude <= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFunction {
    shape: Shape,
    center: f64,
    width: f64,
    peak: f64,
}

impl SpectralFunction {
    pub fn gaussian(center: f64, fwhm: f64, peak: f64) -> Result<Self> {
        check_peak(peak)?;
        check_width(fwhm)?;
        Ok(SpectralFunction {
            shape: Shape::Gaussian,
            center,
            width: fwhm,
            peak,
        })
    }

    pub fn rectangle(center: f64, full_width: f64, peak: f64) -> Result<Self> {
        check_peak(peak)?;
        check_width(full_width)?;
        Ok(SpectralFunction {
            shape: Shape::Rectangle,
            center,
            width: full_width,
            peak,
        })
    }

    /// `gvm` is the signal/idler inverse-group-velocity difference (s/m),
    /// `crystal_length` in meters.
    pub fn sinc_phase_matching(
        center: f64,
        gvm: f64,
        crystal_length: f64,
        peak: f64,
    ) -> Result<Self> {
        check_peak(peak)?;
        if !(gvm > 0.0) || !gvm.is_finite() {
            return Err(Error::domain("sinc: group-velocity mismatch must be > 0"));
        }
        if !(crystal_length > 0.0) || !crystal_length.is_finite() {
            return Err(Error::domain("sinc: crystal length must be > 0"));
        }
        // Main-lobe half-maximum: gvm*L*dw/2 = +/- SINC_HALF_MAX_X.
        let width = 4.0 * SINC_HALF_MAX_X / (gvm * crystal_length);
        Ok(SpectralFunction {
            shape: Shape::SincPhaseMatching {
                gvm,
                crystal_length,
            },
            center,
            width,
            peak,
        })
    }

    /// Step filter passing the high-frequency side of `center`.
    pub fn edge(center: f64, peak: f64) -> Result<Self> {
        Self::edge_directed(center, peak, true)
    }

    /// Step filter; `rising` passes frequencies above `center`, otherwise
    /// below.
    pub fn edge_directed(center: f64, peak: f64, rising: bool) -> Result<Self> {
        check_peak(peak)?;
        Ok(SpectralFunction {
            shape: Shape::Edge { rising },
            center,
            width: f64::INFINITY,
            peak,
        })
    }

    pub fn tabulated(table: Table) -> Result<Self> {
        let peak = table.peak();
        let width = table.fwhm();
        let center = (table.omegas[0] + table.omegas[table.omegas.len() - 1]) / 2.0;
        Ok(SpectralFunction {
            shape: Shape::Tabulated(table),
            center,
            width,
            peak,
        })
    }

    /// Ideal open channel: unit transmission at every frequency.
    pub fn unit() -> Self {
        SpectralFunction {
            shape: Shape::Rectangle,
            center: 0.0,
            width: f64::INFINITY,
            peak: 1.0,
        }
    }

    /// Complex amplitude at angular frequency `omega` (rad/s). For the pair
    /// spectrum the abscissa is the detuning `nu` instead; the formulas do not
    /// care which origin is used.
    pub fn value(&self, omega: f64) -> Complex64 {
        let d = omega - self.center;
        match &self.shape {
            Shape::Gaussian => {
                let x = d / self.width;
                Complex64::new(self.peak * (-4.0 * LN2 * x * x).exp(), 0.0)
            }
            Shape::Rectangle => {
                if d.abs() <= self.width / 2.0 {
                    Complex64::new(self.peak, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Shape::SincPhaseMatching {
                gvm,
                crystal_length,
            } => Complex64::new(self.peak * sinc(gvm * crystal_length * d / 2.0), 0.0),
            Shape::Edge { rising } => {
                let passes = if *rising { d >= 0.0 } else { d <= 0.0 };
                if passes {
                    Complex64::new(self.peak, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Shape::Tabulated(t) => t.value_at(omega),
        }
    }

    /// Intensity transmission `|value|^2`.
    pub fn intensity(&self, omega: f64) -> f64 {
        self.value(omega).norm_sqr()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// FWHM of the amplitude profile. Full width for a rectangle, main-lobe
    /// width for the sinc, infinite for an edge.
    pub fn fwhm(&self) -> f64 {
        self.width
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.peak
    }

    /// Support of the amplitude, `(-inf, inf)` where the shape never
    /// truncates exactly.
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            Shape::Gaussian | Shape::SincPhaseMatching { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            Shape::Rectangle => (self.center - self.width / 2.0, self.center + self.width / 2.0),
            Shape::Edge { rising: true } => (self.center, f64::INFINITY),
            Shape::Edge { rising: false } => (f64::NEG_INFINITY, self.center),
            Shape::Tabulated(t) => (t.omegas[0], t.omegas[t.omegas.len() - 1]),
        }
    }

    /// Integral of the intensity over frequency, `int |value|^2 dw`.
    /// Closed forms where they exist, trapezoid rule for tables, infinite for
    /// an edge.
    pub fn intensity_integral(&self) -> f64 {
        match &self.shape {
            Shape::Gaussian => {
                self.peak * self.peak * self.width * (core::f64::consts::PI / (8.0 * LN2)).sqrt()
            }
            Shape::Rectangle => self.peak * self.peak * self.width,
            Shape::SincPhaseMatching {
                gvm,
                crystal_length,
            } => {
                // int sinc^2(a x) dx = pi / a with a = gvm*L/2.
                self.peak * self.peak * core::f64::consts::PI * 2.0 / (gvm * crystal_length)
            }
            Shape::Edge { .. } => f64::INFINITY,
            Shape::Tabulated(t) => {
                let mut total = 0.0;
                for i in 0..t.omegas.len() - 1 {
                    let a = t.values[i].norm_sqr();
                    let b = t.values[i + 1].norm_sqr();
                    total += 0.5 * (a + b) * (t.omegas[i + 1] - t.omegas[i]);
                }
                total
            }
        }
    }

    /// Same profile translated so that its center sits at `center`.
    pub fn shifted_to(&self, center: f64) -> Self {
        let delta = center - self.center;
        let shape = match &self.shape {
            Shape::Tabulated(t) => Shape::Tabulated(Table {
                omegas: t.omegas.iter().map(|x| x + delta).collect(),
                values: t.values.clone(),
            }),
            other => other.clone(),
        };
        SpectralFunction {
            shape,
            center,
            width: self.width,
            peak: self.peak,
        }
    }

    /// Load a tabulated profile from CSV. The header row names the columns:
    /// the abscissa is `omega` / `omega_rad_s` (rad/s) or `lambda` /
    /// `lambda_nm` (nm, converted and re-sorted to ascending frequency),
    /// followed by `amplitude` and an optional `phase_rad`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::domain(format!("tabulated csv: {e}")))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(Error::domain(format!(
                "tabulated csv: expected 2 or 3 columns, found {}",
                cols.len()
            )));
        }
        let in_lambda = match cols[0] {
            "omega" | "omega_rad_s" => false,
            "lambda" | "lambda_nm" => true,
            other => {
                return Err(Error::domain(format!(
                    "tabulated csv: first column must be omega[_rad_s] or lambda[_nm], found `{other}`"
                )))
            }
        };
        if cols[1] != "amplitude" {
            return Err(Error::domain(format!(
                "tabulated csv: second column must be `amplitude`, found `{}`",
                cols[1]
            )));
        }
        let has_phase = cols.len() == 3;
        if has_phase && cols[2] != "phase_rad" {
            return Err(Error::domain(format!(
                "tabulated csv: third column must be `phase_rad`, found `{}`",
                cols[2]
            )));
        }

        let mut rows: Vec<(f64, Complex64)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::domain(format!("tabulated csv row {}: {e}", i + 1)))?;
            let parse = |field: usize| -> Result<f64> {
                rec.get(field)
                    .ok_or_else(|| {
                        Error::domain(format!("tabulated csv row {}: missing column", i + 1))
                    })?
                    .parse::<f64>()
                    .map_err(|e| Error::domain(format!("tabulated csv row {}: {e}", i + 1)))
            };
            let x = parse(0)?;
            let amp = parse(1)?;
            let phase = if has_phase { parse(2)? } else { 0.0 };
            if !(0.0..=1.0).contains(&amp) {
                return Err(Error::domain(format!(
                    "tabulated csv row {}: amplitude {amp} outside [0, 1]",
                    i + 1
                )));
            }
            let omega = if in_lambda {
                super::omega_from_lambda_nm(x)?
            } else {
                x
            };
            rows.push((omega, Complex64::from_polar(amp, phase)));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (omegas, values): (Vec<f64>, Vec<Complex64>) = rows.into_iter().unzip();
        SpectralFunction::tabulated(Table::new(omegas, values)?)
    }
}

fn check_peak(peak: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&peak) {
        return Err(Error::domain(format!(
            "peak amplitude {peak} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_width(width: f64) -> Result<()> {
    if !(width > 0.0) {
        return Err(Error::domain(format!("width {width} must be > 0")));
    }
    Ok(())
}

trait IsFinite {
    fn is_finite(&self) -> bool;
}

impl IsFinite for Complex64 {
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_half_maximum_at_half_width() {
        let f = SpectralFunction::gaussian(0.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(f.value(1.0).re, 0.5, max_relative = 1e-12);
        assert_relative_eq!(f.value(-1.0).re, 0.5, max_relative = 1e-12);
        assert_relative_eq!(f.value(0.0).re, 1.0);
    }

    #[test]
    fn rectangle_is_zero_outside_support() {
        let f = SpectralFunction::rectangle(5.0, 2.0, 0.8).unwrap();
        assert_eq!(f.value(5.0 + 2.0).re, 0.0);
        assert_eq!(f.value(5.0 - 1.01).re, 0.0);
        assert_eq!(f.value(5.0 + 1.0).re, 0.8);
        assert_eq!(f.value(5.0 - 1.0).re, 0.8);
    }

    #[test]
    fn edge_steps_at_center() {
        let f = SpectralFunction::edge(3.0, 1.0).unwrap();
        assert_eq!(f.value(2.999_999).re, 0.0);
        assert_eq!(f.value(3.0).re, 1.0);
        assert_eq!(f.value(4.0).re, 1.0);
    }

    #[test]
    fn sinc_main_lobe_width_matches_half_maximum() {
        let gvm = 2.0e-10;
        let length = 8.0e-3;
        let f = SpectralFunction::sinc_phase_matching(0.0, gvm, length, 1.0).unwrap();
        let half_x = f.fwhm() / 2.0;
        assert_relative_eq!(f.value(half_x).re, 0.5, max_relative = 1e-9);
        // Sinc amplitudes go negative past the first zero.
        let first_zero = 2.0 * core::f64::consts::PI / (gvm * length);
        assert!(f.value(first_zero * 1.3).re < 0.0);
    }

    #[test]
    fn peak_amplitude_bounds_are_enforced() {
        assert!(SpectralFunction::gaussian(0.0, 1.0, 1.2).is_err());
        assert!(SpectralFunction::gaussian(0.0, 1.0, -0.1).is_err());
        assert!(SpectralFunction::rectangle(0.0, -1.0, 0.5).is_err());
    }

    #[test]
    fn values_never_exceed_peak() {
        let fs = [
            SpectralFunction::gaussian(1.0e15, 1.0e13, 0.7).unwrap(),
            SpectralFunction::rectangle(1.0e15, 1.0e13, 0.7).unwrap(),
            SpectralFunction::sinc_phase_matching(1.0e15, 2.0e-10, 8.0e-3, 0.7).unwrap(),
            SpectralFunction::edge(1.0e15, 0.7).unwrap(),
        ];
        for f in &fs {
            for k in -300..300 {
                let omega = 1.0e15 + k as f64 * 1.7e11;
                assert!(f.value(omega).norm() <= 0.7 + 1e-12);
            }
        }
    }

    #[test]
    fn tabulated_interpolates_and_clips() {
        let t = Table::new(
            vec![1.0e15, 2.0e15, 3.0e15],
            vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let f = SpectralFunction::tabulated(t).unwrap();
        assert_relative_eq!(f.value(1.5e15).re, 0.5, max_relative = 1e-12);
        assert_eq!(f.value(0.9e15).re, 0.0);
        assert_eq!(f.value(3.1e15).re, 0.0);
        assert_relative_eq!(f.fwhm(), 1.0e15, max_relative = 1e-12);
    }

    #[test]
    fn tabulated_requires_strictly_increasing_abscissae() {
        let t = Table::new(
            vec![1.0e15, 1.0e15],
            vec![Complex64::new(0.1, 0.0), Complex64::new(0.2, 0.0)],
        );
        assert!(t.is_err());
    }

    #[test]
    fn csv_round_trip_with_lambda_and_phase() {
        let data = "lambda_nm,amplitude,phase_rad\n850,0.9,0.0\n855,0.5,1.5707963267948966\n860,0.1,0.0\n";
        let f = SpectralFunction::from_csv(data.as_bytes()).unwrap();
        // 855 nm lies between the endpoints after conversion to frequency.
        let omega = super::super::omega_from_lambda_nm(855.0).unwrap();
        let v = f.value(omega);
        assert_relative_eq!(v.norm(), 0.5, max_relative = 1e-9);
        assert_relative_eq!(v.im, 0.5, max_relative = 1e-9);
        assert_relative_eq!(f.peak_amplitude(), 0.9);
    }

    #[test]
    fn csv_rejects_unknown_first_column() {
        let data = "frequency,amplitude\n1,0.5\n2,0.6\n";
        assert!(SpectralFunction::from_csv(data.as_bytes()).is_err());
    }

    #[test]
    fn shifted_profile_moves_tabulated_support() {
        let t = Table::new(
            vec![1.0e15, 2.0e15],
            vec![Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)],
        )
        .unwrap();
        let f = SpectralFunction::tabulated(t).unwrap();
        let g = f.shifted_to(5.0e15);
        assert_relative_eq!(g.support().0, 4.5e15, max_relative = 1e-12);
        assert_relative_eq!(g.support().1, 5.5e15, max_relative = 1e-12);
    }
}

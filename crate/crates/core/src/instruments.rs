//! Stochastic optics: spectral filtering of each arm and a click-level
//! detector model.
//!
//! Transmission is intensity-level (Born rule on the amplitude functions),
//! detection is a standard single-photon-counting chain: wavelength-tilted
//! efficiency, gaussian timing jitter, Poisson dark counts, and
//! non-paralyzable dead time. Each photon consumes exactly one uniform draw
//! for its survival decision, so under a fixed seed a pointwise-larger
//! transmission can only enlarge the surviving set.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::montecarlo::PairSample;
use crate::spectra::{lambda_nm_from_omega, SpectralFunction};
use crate::timetag::{DetectorId, EventStream};

/// Which photon of a pair an operation addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Signal,
    Idler,
}

/// Single-photon counting module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorModel {
    /// Click probability at the reference wavelength, [0, 1].
    pub efficiency: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// FWHM of the gaussian timing jitter, s.
    pub jitter_fwhm: f64,
    /// Non-paralyzable dead time, s.
    pub dead_time: f64,
    /// Linear efficiency tilt, 1/nm. Zero for a flat detector.
    pub efficiency_slope: f64,
    /// Wavelength where `efficiency` applies, nm.
    pub lambda_ref_nm: f64,
}

impl DetectorModel {
    pub fn new(
        efficiency: f64,
        dark_rate: f64,
        jitter_fwhm: f64,
        dead_time: f64,
    ) -> Result<Self> {
        let model = DetectorModel {
            efficiency,
            dark_rate,
            jitter_fwhm,
            dead_time,
            efficiency_slope: 0.0,
            lambda_ref_nm: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_tilt(mut self, slope_per_nm: f64, lambda_ref_nm: f64) -> Result<Self> {
        self.efficiency_slope = slope_per_nm;
        self.lambda_ref_nm = lambda_ref_nm;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::domain(format!(
                "efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("jitter_fwhm", self.jitter_fwhm),
            ("dead_time", self.dead_time),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite and >= 0")));
            }
        }
        if !self.efficiency_slope.is_finite() || !self.lambda_ref_nm.is_finite() {
            return Err(Error::domain("efficiency tilt parameters must be finite"));
        }
        if self.efficiency_slope != 0.0 && self.lambda_ref_nm <= 0.0 {
            return Err(Error::domain(
                "a tilted detector needs a positive reference wavelength",
            ));
        }
        Ok(())
    }

    /// Efficiency at a wavelength, tilt applied and clamped to [0, 1].
    pub fn efficiency_at(&self, lambda_nm: f64) -> f64 {
        let eta = self.efficiency + self.efficiency_slope * (lambda_nm - self.lambda_ref_nm);
        eta.clamp(0.0, 1.0)
    }
}

/// A monochromator position: passband shape around a center frequency.
#[derive(Clone, Debug)]
pub struct MonochromatorSetting {
    omega_m: f64,
    response: SpectralFunction,
}

impl MonochromatorSetting {
    /// `response` is the passband centered at zero detuning; its width is the
    /// instrument resolution.
    pub fn new(omega_m: f64, response: SpectralFunction) -> Result<Self> {
        if !(omega_m > 0.0) || !omega_m.is_finite() {
            return Err(Error::domain("monochromator center must be positive finite"));
        }
        if !(response.fwhm() > 0.0) || response.fwhm().is_infinite() {
            return Err(Error::domain(
                "monochromator response needs a finite positive width",
            ));
        }
        Ok(MonochromatorSetting { omega_m, response })
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    pub fn response(&self) -> &SpectralFunction {
        &self.response
    }

    /// The passband as a function of absolute frequency.
    pub fn as_function(&self) -> SpectralFunction {
        self.response.shifted_to(self.omega_m)
    }

    /// Intensity transmission at an absolute frequency.
    pub fn transmission(&self, omega: f64) -> f64 {
        self.as_function().intensity(omega)
    }
}

/// Decide survival of the chosen arm's photon through an amplitude function.
/// Flags are parallel to the input; one uniform is drawn per pair whether or
/// not it survives.
pub fn transmit<R: Rng + ?Sized>(
    pairs: &[PairSample],
    arm: Arm,
    function: &SpectralFunction,
    rng: &mut R,
) -> Vec<bool> {
    pairs
        .iter()
        .map(|pair| {
            let omega = match arm {
                Arm::Signal => pair.omega_s,
                Arm::Idler => pair.omega_i,
            };
            rng.random::<f64>() < function.intensity(omega)
        })
        .collect()
}

/// One photon at a detector input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonArrival {
    /// Arrival time at the detector plane, s (reference clock).
    pub time: f64,
    /// Vacuum wavelength, nm, for the efficiency tilt.
    pub lambda_nm: f64,
}

impl PhotonArrival {
    pub fn from_pair(pair: &PairSample, arm: Arm, time: f64) -> Result<Self> {
        let omega = match arm {
            Arm::Signal => pair.omega_s,
            Arm::Idler => pair.omega_i,
        };
        Ok(PhotonArrival {
            time,
            lambda_nm: lambda_nm_from_omega(omega)?,
        })
    }
}

/// Turn photon arrivals into a click stream on the reference clock.
///
/// Stages, in order: per-arrival efficiency decision (one uniform each),
/// gaussian jitter on accepted clicks, an independent Poisson dark-count
/// process on [0, duration), a sort, quantization to the tick grid, and
/// non-paralyzable dead-time pruning in the tick domain. Clicks that jitter
/// outside [0, duration) are discarded.
pub fn detect<R: Rng + ?Sized>(
    arrivals: &[PhotonArrival],
    model: &DetectorModel,
    detector: DetectorId,
    duration: f64,
    resolution_ps: u32,
    rng: &mut R,
) -> Result<EventStream> {
    model.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain("duration must be positive and finite"));
    }
    if !arrivals.windows(2).all(|w| w[0].time <= w[1].time) {
        return Err(Error::domain("arrivals must be sorted ascending"));
    }

    let sigma = model.jitter_fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
    let jitter = Normal::new(0.0, sigma).map_err(|e| Error::domain(e.to_string()))?;

    let mut clicks: Vec<f64> = Vec::with_capacity(arrivals.len() / 2 + 16);
    for arrival in arrivals {
        let survives = rng.random::<f64>() < model.efficiency_at(arrival.lambda_nm);
        if !survives {
            continue;
        }
        let t = if sigma > 0.0 {
            arrival.time + jitter.sample(rng)
        } else {
            arrival.time
        };
        if (0.0..duration).contains(&t) {
            clicks.push(t);
        }
    }

    if model.dark_rate > 0.0 {
        let gap = Exp::new(model.dark_rate).map_err(|e| Error::domain(e.to_string()))?;
        let mut t = gap.sample(rng);
        while t < duration {
            clicks.push(t);
            t += gap.sample(rng);
        }
    }

    clicks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantized = EventStream::from_times_s(detector, resolution_ps, duration, &clicks)?;

    let dead_ticks = (model.dead_time / quantized.resolution_s()).round() as u64;
    if dead_ticks <= 1 {
        return Ok(quantized);
    }
    let mut kept: Vec<u64> = Vec::with_capacity(quantized.len());
    for &tick in quantized.ticks() {
        match kept.last() {
            Some(&last) if tick - last < dead_ticks => {}
            _ => kept.push(tick),
        }
    }
    EventStream::new(detector, resolution_ps, quantized.duration_ps(), kept)
}

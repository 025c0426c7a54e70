//! Pair sampling for the Monte Carlo engine.
//!
//! Pairs are born on a homogeneous Poisson process and carry a detuning `nu`
//! drawn from the normalized pump-envelope intensity. The two optical
//! frequencies are anticorrelated about the pump: their float sum is made
//! bit-for-bit equal to `omega_p` by always deriving one member of the pair
//! from the other through an exactly representable subtraction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::spectra::{DispersiveMedium, SpectralFunction, TwoPhotonWavefunction};

/// Hard cap on pairs per call; larger runs should be streamed in chunks.
pub const PAIR_CAPACITY: u64 = 1 << 32;

/// Grid resolution for inverse-CDF sampling tables.
const SAMPLER_POINTS: usize = 16_385;

/// Truncation half-width, in FWHM units, for densities with unbounded
/// support. Slowly decaying profiles get a wider window.
const GAUSSIAN_WINDOW_FWHM: f64 = 4.0;
const SINC_WINDOW_FWHM: f64 = 64.0;

/// One emitted photon pair in the laboratory reference frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSample {
    /// Emission time, s.
    pub birth_time: f64,
    /// Detuning from the band centers, rad/s.
    pub nu: f64,
    /// Signal frequency, rad/s; `omega_s0 + nu` up to one rounding.
    pub omega_s: f64,
    /// Idler frequency, rad/s; exactly `omega_p - omega_s` in floats.
    pub omega_i: f64,
}

#[derive(Clone, Debug)]
pub struct SourceConfig {
    /// Mean pair emission rate, pairs/s.
    pub pair_rate: f64,
    /// Observation span, s.
    pub duration: f64,
    /// Pump frequency, rad/s.
    pub omega_p: f64,
    /// Signal band center, rad/s.
    pub omega_s0: f64,
    /// Idler band center, rad/s.
    pub omega_i0: f64,
    /// Pump envelope Phi as a function of detuning.
    pub phi: SpectralFunction,
    pub rng_seed: u64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate > 0.0) || !self.pair_rate.is_finite() {
            return Err(Error::domain("pair_rate must be positive and finite"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::domain("duration must be positive and finite"));
        }
        for (name, v) in [
            ("omega_p", self.omega_p),
            ("omega_s0", self.omega_s0),
            ("omega_i0", self.omega_i0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{name} must be positive and finite")));
            }
        }
        let sum = self.omega_s0 + self.omega_i0;
        if (sum - self.omega_p).abs() > 1e-9 * self.omega_p {
            return Err(Error::domain(format!(
                "band centers must sum to the pump frequency \
                 (omega_s0 + omega_i0 = {sum:e}, omega_p = {:e})",
                self.omega_p
            )));
        }
        Ok(())
    }

    pub fn expected_pairs(&self) -> f64 {
        self.pair_rate * self.duration
    }
}

/// Split a detuning into a frequency pair whose float sum equals `omega_p`
/// bit-for-bit. Whichever member lands at or above `omega_p / 2` is computed
/// first; the complement `omega_p - x` is then exact by the Sterbenz lemma
/// because `x` lies in `[omega_p / 2, 2 * omega_p]`.
fn split_frequencies(omega_p: f64, omega_s0: f64, omega_i0: f64, nu: f64) -> (f64, f64) {
    let half = omega_p / 2.0;
    let omega_s = omega_s0 + nu;
    if omega_s >= half {
        (omega_s, omega_p - omega_s)
    } else {
        let omega_i = omega_i0 - nu;
        (omega_p - omega_i, omega_i)
    }
}

/// Draw the pair stream for one run. Identical config (seed included) gives
/// identical output.
pub fn generate_pairs(config: &SourceConfig) -> Result<Vec<PairSample>> {
    config.validate()?;
    let expected = config.expected_pairs();
    if expected > PAIR_CAPACITY as f64 {
        return Err(Error::Capacity {
            expected,
            limit: PAIR_CAPACITY,
        });
    }

    let sampler = DetuningSampler::new(&config.phi)?;
    let (lo, hi) = sampler.support();
    let band = config.omega_s0.min(config.omega_i0);
    if lo.abs().max(hi.abs()) >= band {
        return Err(Error::domain(
            "detuning support reaches beyond the optical band centers",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let gap = Exp::new(config.pair_rate).expect("positive rate");
    let mut pairs = Vec::with_capacity((expected * 1.05) as usize + 16);
    let mut t = gap.sample(&mut rng);
    while t < config.duration {
        let nu = sampler.sample(&mut rng);
        let (omega_s, omega_i) = split_frequencies(config.omega_p, config.omega_s0, config.omega_i0, nu);
        debug_assert_eq!(omega_s + omega_i, config.omega_p);
        pairs.push(PairSample {
            birth_time: t,
            nu,
            omega_s,
            omega_i,
        });
        t += gap.sample(&mut rng);
    }
    Ok(pairs)
}

/// Inverse-CDF sampler over a piecewise-linear density on a node grid.
/// Integration is trapezoidal, so `cdf` is piecewise quadratic and the
/// per-cell inversion solves that quadratic in closed form.
#[derive(Clone, Debug)]
struct InverseCdf {
    xs: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl InverseCdf {
    fn new(xs: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if xs.len() != density.len() || xs.len() < 2 {
            return Err(Error::domain("sampler needs at least two matching nodes"));
        }
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain("sampler nodes must be strictly increasing"));
        }
        if !density.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(Error::domain("sampler density must be finite and nonnegative"));
        }
        let mut cdf = Vec::with_capacity(xs.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 1..xs.len() {
            acc += 0.5 * (density[i] + density[i - 1]) * (xs[i] - xs[i - 1]);
            cdf.push(acc);
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::domain("sampler density has no mass"));
        }
        Ok(InverseCdf {
            xs,
            density,
            cdf,
            total: acc,
        })
    }

    /// Map a uniform variate in [0, 1) to a sample.
    fn invert(&self, u: f64) -> f64 {
        let target = u * self.total;
        let j = self
            .cdf
            .partition_point(|&c| c <= target)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        let r = target - self.cdf[j];
        let h = self.xs[j + 1] - self.xs[j];
        let d0 = self.density[j];
        let slope_term = self.density[j + 1] - d0;
        // Cumulative mass within the cell: d0*s + slope_term*s^2/(2h) = r.
        // The citardauq form is cancellation-free for either slope sign.
        let denom = d0 + (d0 * d0 + 2.0 * slope_term * r / h).max(0.0).sqrt();
        let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        self.xs[j] + s.clamp(0.0, h)
    }

    /// Normalized CDF at `x` (0 below the grid, 1 above it).
    fn cdf_at(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let j = self.xs.partition_point(|&n| n <= x) - 1;
        let s = x - self.xs[j];
        let h = self.xs[j + 1] - self.xs[j];
        let d0 = self.density[j];
        let slope = (self.density[j + 1] - d0) / h;
        (self.cdf[j] + d0 * s + 0.5 * slope * s * s) / self.total
    }
}

/// Samples detunings with density proportional to the squared magnitude of
/// the pump envelope.
#[derive(Clone, Debug)]
pub struct DetuningSampler {
    inner: InverseCdf,
}

impl DetuningSampler {
    pub fn new(phi: &SpectralFunction) -> Result<Self> {
        let fwhm = phi.fwhm();
        let (supp_lo, supp_hi) = phi.support();
        let (lo, hi) = if supp_lo.is_finite() && supp_hi.is_finite() {
            (supp_lo, supp_hi)
        } else if fwhm.is_finite() {
            let half = match phi.shape() {
                crate::spectra::Shape::SincPhaseMatching { .. } => SINC_WINDOW_FWHM * fwhm,
                _ => GAUSSIAN_WINDOW_FWHM * fwhm,
            };
            (
                (phi.center() - half).max(supp_lo),
                (phi.center() + half).min(supp_hi),
            )
        } else {
            return Err(Error::domain(
                "cannot sample an unnormalizable spectral density",
            ));
        };
        if !(hi > lo) {
            return Err(Error::domain("empty sampling support"));
        }
        let n = SAMPLER_POINTS;
        let step = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|j| lo + j as f64 * step).collect();
        let density: Vec<f64> = xs.iter().map(|&x| phi.intensity(x)).collect();
        Ok(DetuningSampler {
            inner: InverseCdf::new(xs, density)?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inner.invert(rng.random::<f64>())
    }

    /// CDF of the sampled (truncated, piecewise-linear) density.
    pub fn cdf(&self, nu: f64) -> f64 {
        self.inner.cdf_at(nu)
    }

    /// Range the sampler can produce, `(lo, hi)`.
    pub fn support(&self) -> (f64, f64) {
        (self.inner.xs[0], *self.inner.xs.last().unwrap())
    }
}

/// Draws the signal-idler delay for one pair from the normalized correlation
/// function of the current optical configuration.
#[derive(Clone, Debug)]
pub enum CorrelationSampler {
    /// Perfect timing correlation: every pair gets zero delay.
    Delta,
    /// Delays distributed as a tabulated correlation function.
    Grid(Box<CorrelationGrid>),
}

#[derive(Clone, Debug)]
pub struct CorrelationGrid {
    inner: InverseCdf,
}

impl CorrelationSampler {
    pub fn delta() -> Self {
        CorrelationSampler::Delta
    }

    /// Build from the correlation function of a computed two-photon
    /// wavefunction.
    pub fn from_wavefunction(psi: &TwoPhotonWavefunction) -> Result<Self> {
        let taus: Vec<f64> = psi.taus().collect();
        Self::from_grid(taus, psi.g2().to_vec())
    }

    /// Build from explicit `(tau, weight)` nodes; weights need not be
    /// normalized.
    pub fn from_grid(taus: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Ok(CorrelationSampler::Grid(Box::new(CorrelationGrid {
            inner: InverseCdf::new(taus, weights)?,
        })))
    }

    /// Delay `tau = t2 - t1` in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CorrelationSampler::Delta => 0.0,
            CorrelationSampler::Grid(g) => g.inner.invert(rng.random::<f64>()),
        }
    }
}

/// Propagate one pair to the two detector planes. The drawn delay `tau` is
/// split symmetrically, signal at `-tau/2` and idler at `+tau/2`, around the
/// group-delay-shifted birth time; only the difference is observable.
pub fn pair_arrival_times<R: Rng + ?Sized>(
    pair: &PairSample,
    path1: &DispersiveMedium,
    path2: &DispersiveMedium,
    correlation: &CorrelationSampler,
    rng: &mut R,
) -> (f64, f64) {
    let tau = correlation.sample(rng);
    let t1 = pair.birth_time + path1.group_delay() - 0.5 * tau;
    let t2 = pair.birth_time + path2.group_delay() + 0.5 * tau;
    (t1, t2)
}

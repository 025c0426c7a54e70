//! Monochromator scans and spectrum reconstruction.
//!
//! A scan steps the monochromator on the idler arm across a wavelength grid
//! and records, per setting, the two singles totals and the coincidence
//! count at the aligned offset. Because pair frequencies are anticorrelated,
//! the coincidence curve traces the remote sample function in reverse:
//! plotting each point against the conjugate wavelength recovers the sample
//! spectrum without any spectrometer in the signal arm.
//!
//! Two engines produce [`ScanCurve`]s. [`run_scan`] emulates the whole
//! chain: pair generation, filtering, detection, independent clocks,
//! offset recovery, coincidence counting. [`analytic_scan`] evaluates the
//! expected counts of exactly that chain by quadrature, so the two agree to
//! Monte Carlo error, not merely to a narrowband approximation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coincidence::{align, count_coincidences, AlignmentResult, CoincidenceWindow};
use crate::config::{derive_seed, seed_stage, RunConfig};
use crate::error::{Error, Result};
use crate::instruments::{detect, transmit, Arm, DetectorModel, PhotonArrival};
use crate::montecarlo::{
    generate_pairs, pair_arrival_times, CorrelationSampler, DetuningSampler, SourceConfig,
};
use crate::spectra::{
    compute_psi, conjugate_wavelength, lambda_nm_from_omega, omega_from_lambda_nm,
    FrequencyGrid, SpectralFunction,
};
use crate::timetag::{apply_clock, DetectorId, EventStream};

/// Simpson intervals for the rate quadratures.
const QUAD_INTERVALS: usize = 8192;

/// One monochromator setting. Counts are `f64` so the same record holds
/// integer Monte Carlo totals and fractional analytic expectations.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPoint {
    /// Monochromator setting, nm.
    pub lambda_m_nm: f64,
    /// Conjugate wavelength on the signal arm, nm.
    pub lambda_conj_nm: f64,
    pub singles1: f64,
    pub singles2: f64,
    pub coincidences: f64,
    pub dwell_s: f64,
    /// Coincidences per idler single; `None` when there were no idler counts.
    pub normalized: Option<f64>,
}

/// A completed scan: one point per setting, strictly increasing in
/// `lambda_m_nm`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanCurve {
    pump_lambda_nm: f64,
    points: Vec<ScanPoint>,
}

impl ScanCurve {
    pub fn new(pump_lambda_nm: f64, points: Vec<ScanPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("scan curve needs at least one point"));
        }
        if !points
            .windows(2)
            .all(|w| w[0].lambda_m_nm < w[1].lambda_m_nm)
        {
            return Err(Error::domain(
                "scan points must be strictly increasing in lambda_m_nm",
            ));
        }
        for p in &points {
            let finite = p.lambda_m_nm.is_finite()
                && p.lambda_conj_nm.is_finite()
                && p.singles1.is_finite()
                && p.singles2.is_finite()
                && p.coincidences.is_finite()
                && p.dwell_s.is_finite();
            if !finite || p.singles1 < 0.0 || p.singles2 < 0.0 || p.coincidences < 0.0 {
                return Err(Error::domain("scan point with non-finite or negative entry"));
            }
            if !(p.dwell_s > 0.0) {
                return Err(Error::domain("scan point with non-positive dwell"));
            }
        }
        Ok(ScanCurve {
            pump_lambda_nm,
            points,
        })
    }

    pub fn pump_lambda_nm(&self) -> f64 {
        self.pump_lambda_nm
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ctx = "writing scan csv";
        writeln!(
            w,
            "lambda_M_nm,lambda_conj_nm,singles1,singles2,coinc,dwell_s,normalized"
        )
        .map_err(|e| Error::io(ctx, e))?;
        for p in &self.points {
            let normalized = p.normalized.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                p.lambda_m_nm,
                p.lambda_conj_nm,
                p.singles1,
                p.singles2,
                p.coincidences,
                p.dwell_s,
                normalized
            )
            .map_err(|e| Error::io(ctx, e))?;
        }
        Ok(())
    }
}

/// Expected observed rates at one monochromator setting, per second.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedRates {
    pub coincidence: f64,
    pub singles1: f64,
    pub singles2: f64,
}

/// Analytic expectations for the counting chain. The pair-level detection
/// probabilities are quadratures of the same densities the Monte Carlo
/// samples; dead-time thinning and accidental pile-up are applied on top so
/// the numbers are directly comparable to observed counts.
struct AnalyticEngine<'a> {
    cfg: &'a RunConfig,
    omega_s0: f64,
    omega_i0: f64,
    window_s: f64,
    det1: DetectorModel,
    det2: DetectorModel,
    /// Simpson nodes over the sampled detuning support.
    nus: Vec<f64>,
    /// Normalized pair-density weights at the nodes; they sum to one.
    weights: Vec<f64>,
    /// Signal-arm survival (filter intensity times efficiency) per node.
    f_eta1: Vec<f64>,
    /// Idler-arm detector efficiency per node.
    eta2: Vec<f64>,
    /// Pair detection probability on the signal arm (detuning marginal).
    marginal1: f64,
}

impl<'a> AnalyticEngine<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let omega_s0 = cfg.omega_s0()?;
        let omega_i0 = cfg.omega_i0()?;
        let phi = cfg.phi_function()?;
        let f = cfg.sample_function()?;
        let det1 = cfg.detector1_model()?;
        let det2 = cfg.detector2_model()?;

        // Integrate over the support the sampler actually draws from, so
        // truncation of unbounded shapes cancels between the engines.
        let (lo, hi) = DetuningSampler::new(&phi)?.support();
        let n = QUAD_INTERVALS;
        let h = (hi - lo) / n as f64;
        let mut nus = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        let mut f_eta1 = Vec::with_capacity(n + 1);
        let mut eta2 = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let nu = lo + j as f64 * h;
            let simpson = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            nus.push(nu);
            weights.push(simpson * phi.intensity(nu));
            let lambda_s = lambda_nm_from_omega(omega_s0 + nu)?;
            f_eta1.push(f.intensity(omega_s0 + nu) * det1.efficiency_at(lambda_s));
            let lambda_i = lambda_nm_from_omega(omega_i0 - nu)?;
            eta2.push(det2.efficiency_at(lambda_i));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("pump envelope has zero integrated intensity"));
        }
        for w in &mut weights {
            *w /= total;
        }
        let marginal1 = weights.iter().zip(&f_eta1).map(|(w, s)| w * s).sum();

        Ok(AnalyticEngine {
            cfg,
            omega_s0,
            omega_i0,
            window_s: cfg.window_ns * 1e-9,
            det1,
            det2,
            nus,
            weights,
            f_eta1,
            eta2,
            marginal1,
        })
    }

    fn rates_at(&self, lambda_m_nm: f64) -> Result<ExpectedRates> {
        let pi = self.cfg.pi_response_at(lambda_m_nm)?;
        let omega_m = omega_from_lambda_nm(lambda_m_nm)?;
        let nu_star = self.omega_i0 - omega_m;
        let _ = self.omega_s0;

        let mut p2 = 0.0;
        let mut pcc = 0.0;
        for j in 0..self.nus.len() {
            let pass2 = pi.intensity(nu_star - self.nus[j]) * self.eta2[j];
            let w = self.weights[j];
            p2 += w * pass2;
            pcc += w * pass2 * self.f_eta1[j];
        }

        let rate = self.cfg.source.pair_rate_per_s;
        let s1_true = rate * self.marginal1 + self.cfg.detector1.dark_rate_hz;
        let s2_true = rate * p2 + self.cfg.detector2.dark_rate_hz;
        let cc_true = rate * pcc;
        // Non-paralyzable dead-time thinning, then accidental pile-up over
        // the full window.
        let l1 = 1.0 / (1.0 + s1_true * self.det1.dead_time);
        let l2 = 1.0 / (1.0 + s2_true * self.det2.dead_time);
        let singles1 = s1_true * l1;
        let singles2 = s2_true * l2;
        let coincidence = cc_true * l1 * l2 + singles1 * singles2 * self.window_s;
        Ok(ExpectedRates {
            coincidence,
            singles1,
            singles2,
        })
    }
}

/// Expected observed rates at one setting (builds the quadrature each call;
/// the scan engines amortize it across the grid internally).
pub fn analytic_rates(cfg: &RunConfig, lambda_m_nm: f64) -> Result<ExpectedRates> {
    AnalyticEngine::new(cfg)?.rates_at(lambda_m_nm)
}

/// The monochromator settings a config describes, nm, ascending. A single
/// point sits at the grid midpoint.
pub fn scan_grid(cfg: &RunConfig) -> Result<Vec<f64>> {
    let (lo, hi) = match (cfg.scan.lambda_m_min_nm, cfg.scan.lambda_m_max_nm) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => {
            return Err(Error::config(
                "scan.lambda_m_min_nm",
                "grid bounds not set; materialize the config first",
            ))
        }
    };
    let n = cfg.scan.points;
    if n == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// Fill in the derived scan parameters, leaving explicit settings alone.
///
/// Grid bounds default to the conjugates of the sample band at center
/// +- 3 FWHM, so the scan brackets the feature with clean baseline on both
/// sides. The dwell defaults to whatever makes the highest-rate grid point
/// collect `target_peak_coincidences` in expectation. Shapes without a
/// finite width (edge, open, tabulated) have no derivable grid; those
/// configs must set the bounds explicitly.
pub fn materialize(cfg: &RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    let mut out = cfg.clone();

    if out.scan.lambda_m_min_nm.is_none() {
        let underivable = || {
            Error::config(
                "scan.lambda_m_min_nm",
                "cannot derive a grid for this sample shape; set explicit bounds",
            )
        };
        let center = cfg.sample.center_nm().ok_or_else(underivable)?;
        let fwhm = cfg.sample.fwhm_nm().ok_or_else(underivable)?;
        let lo_s = center - 3.0 * fwhm;
        let hi_s = center + 3.0 * fwhm;
        // The conjugate map reverses order, so the signal-side top becomes
        // the monochromator-side bottom.
        let m_min = conjugate_wavelength(cfg.pump_lambda_nm, hi_s)
            .map_err(|e| Error::config("scan.lambda_m_min_nm", e.to_string()))?;
        let m_max = conjugate_wavelength(cfg.pump_lambda_nm, lo_s)
            .map_err(|e| Error::config("scan.lambda_m_max_nm", e.to_string()))?;
        out.scan.lambda_m_min_nm = Some(m_min);
        out.scan.lambda_m_max_nm = Some(m_max);
    }

    if out.scan.dwell_s.is_none() {
        let engine = AnalyticEngine::new(&out)?;
        let mut peak = 0.0f64;
        for lambda in scan_grid(&out)? {
            peak = peak.max(engine.rates_at(lambda)?.coincidence);
        }
        if !(peak > 0.0) {
            return Err(Error::config(
                "scan.dwell_s",
                "expected coincidence rate vanishes on the whole grid; set the dwell explicitly",
            ));
        }
        out.scan.dwell_s = Some(out.scan.target_peak_coincidences / peak);
    }

    out.validate()?;
    Ok(out)
}

fn best_setting(engine: &AnalyticEngine, lambdas: &[f64]) -> Result<usize> {
    let mut idx = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let rate = engine.rates_at(lambda)?.coincidence;
        if rate > best {
            best = rate;
            idx = i;
        }
    }
    Ok(idx)
}

/// The grid setting with the highest expected coincidence rate, where
/// [`run_scan`] recovers the clock offset. Requires a materialized config.
pub fn peak_rate_setting(cfg: &RunConfig) -> Result<f64> {
    let lambdas = scan_grid(cfg)?;
    let engine = AnalyticEngine::new(cfg)?;
    Ok(lambdas[best_setting(&engine, &lambdas)?])
}

/// Evaluate the expected scan curve without sampling anything.
pub fn analytic_scan(cfg: &RunConfig) -> Result<ScanCurve> {
    let cfg = materialize(cfg)?;
    let dwell = cfg.scan.dwell_s.expect("materialized");
    let engine = AnalyticEngine::new(&cfg)?;
    let mut points = Vec::new();
    for lambda_m in scan_grid(&cfg)? {
        let rates = engine.rates_at(lambda_m)?;
        let singles2 = rates.singles2 * dwell;
        let coincidences = rates.coincidence * dwell;
        points.push(ScanPoint {
            lambda_m_nm: lambda_m,
            lambda_conj_nm: conjugate_wavelength(cfg.pump_lambda_nm, lambda_m)?,
            singles1: rates.singles1 * dwell,
            singles2,
            coincidences,
            dwell_s: dwell,
            normalized: (singles2 > 0.0).then(|| coincidences / singles2),
        });
    }
    ScanCurve::new(cfg.pump_lambda_nm, points)
}

/// A Monte Carlo scan with its recovered alignment and the fully
/// materialized config that produced it.
#[derive(Clone, Debug)]
pub struct ScanRun {
    pub config: RunConfig,
    pub curve: ScanCurve,
    pub alignment: AlignmentResult,
}

/// Simulate the full chain at every grid point.
///
/// The offset between the two clocks is recovered once, from the grid point
/// with the highest expected coincidence rate (the edges of a well-chosen
/// grid are nearly rate-free, so aligning there would be hopeless), and then
/// reused across the scan; each point's count at that offset is also probed
/// against a far sideband and logged. Fails with [`Error::NoAlignment`] if
/// the recovered peak does not clear the configured significance.
pub fn run_scan(cfg: &RunConfig) -> Result<ScanRun> {
    let cfg = materialize(cfg)?;
    let params = cfg.alignment_params()?;
    let window = cfg.window()?;
    let lambdas = scan_grid(&cfg)?;

    let engine = AnalyticEngine::new(&cfg)?;
    let align_idx = best_setting(&engine, &lambdas)?;

    let (s1_align, s2_align) = simulate_point(&cfg, lambdas[align_idx], align_idx)?;
    let alignment = align(&s1_align, &s2_align, &params)?;
    if !alignment.aligned {
        return Err(Error::NoAlignment {
            significance: alignment.significance,
            threshold: params.significance_threshold,
        });
    }
    let offset = alignment.best_offset();
    log::info!(
        "alignment at {:.3} nm: offset {} ps, peak {}, background {:.2}, significance {:.1}",
        lambdas[align_idx],
        alignment.best_offset_ps,
        alignment.peak_count,
        alignment.background_mean,
        alignment.significance,
    );

    let points: Vec<ScanPoint> = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lambda_m)| {
            let (s1, s2) = if i == align_idx {
                (s1_align.clone(), s2_align.clone())
            } else {
                simulate_point(&cfg, lambda_m, i)?
            };
            point_from_streams(&cfg, lambda_m, &s1, &s2, offset, &window)
        })
        .collect::<Result<_>>()?;

    Ok(ScanRun {
        curve: ScanCurve::new(cfg.pump_lambda_nm, points)?,
        alignment,
        config: cfg,
    })
}

fn point_from_streams(
    cfg: &RunConfig,
    lambda_m: f64,
    s1: &EventStream,
    s2: &EventStream,
    offset: f64,
    window: &CoincidenceWindow,
) -> Result<ScanPoint> {
    let cc = count_coincidences(s1, s2, offset, window)?;
    // A window far off the peak estimates the accidental floor; a point
    // whose on-peak count sits at the floor carries no correlation signal,
    // which is expected off-band but worth surfacing in the run log.
    let sideband = count_coincidences(s1, s2, offset + 20.0 * window.width(), window)?;
    log::debug!(
        "lambda_M {:.3} nm: singles {}/{}, coincidences {} (sideband {})",
        lambda_m,
        s1.len(),
        s2.len(),
        cc,
        sideband,
    );
    Ok(ScanPoint {
        lambda_m_nm: lambda_m,
        lambda_conj_nm: conjugate_wavelength(cfg.pump_lambda_nm, lambda_m)?,
        singles1: s1.len() as f64,
        singles2: s2.len() as f64,
        coincidences: cc as f64,
        dwell_s: cfg.scan.dwell_s.expect("materialized"),
        normalized: (!s2.is_empty()).then(|| cc as f64 / s2.len() as f64),
    })
}

/// One dwell at one monochromator setting, outside any scan: two time-tag
/// streams on their local clocks. The config must be materialized (it
/// supplies the dwell).
pub fn simulate_setting(cfg: &RunConfig, lambda_m_nm: f64) -> Result<(EventStream, EventStream)> {
    if cfg.scan.dwell_s.is_none() {
        return Err(Error::config(
            "scan.dwell_s",
            "dwell not set; materialize the config first",
        ));
    }
    simulate_point(cfg, lambda_m_nm, 0)
}

/// One dwell at one setting: pairs through both arms to two time-tag
/// streams on their local clocks. Every stochastic stage draws from its own
/// seed stream, so changing one stage's parameters never perturbs the
/// others' draws.
fn simulate_point(
    cfg: &RunConfig,
    lambda_m_nm: f64,
    index: usize,
) -> Result<(EventStream, EventStream)> {
    let dwell = cfg.scan.dwell_s.expect("materialized");
    let omega_p = cfg.omega_p()?;
    let omega_s0 = cfg.omega_s0()?;
    let omega_i0 = cfg.omega_i0()?;
    let omega_m = omega_from_lambda_nm(lambda_m_nm)?;
    let phi = cfg.phi_function()?;
    let f = cfg.sample_function()?;
    let pi = cfg.pi_response_at(lambda_m_nm)?;

    let source = SourceConfig {
        pair_rate: cfg.source.pair_rate_per_s,
        duration: dwell,
        omega_p,
        omega_s0,
        omega_i0,
        phi: phi.clone(),
        rng_seed: derive_seed(cfg.seed, index as u64, seed_stage::SOURCE),
    };
    let pairs = generate_pairs(&source)?;

    // Timing spread of a pair comes from the correlation function of the
    // full optical configuration at this setting.
    let medium_s = cfg.signal_medium()?;
    let medium_i = cfg.idler_medium()?;
    let grid = FrequencyGrid::for_functions(omega_s0, omega_i0, &[&phi, &f, &pi])?;
    let psi = compute_psi(&grid, &phi, &f, &pi, omega_m, &medium_s, &medium_i)?;
    let correlation = match CorrelationSampler::from_wavefunction(&psi) {
        Ok(sampler) => sampler,
        // A configuration with no overlap at all still runs; pairs then
        // carry no extra delay and simply never pass both filters.
        Err(_) => CorrelationSampler::delta(),
    };

    let mut rng_arrival =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64, seed_stage::ARRIVAL));
    let arrivals: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| pair_arrival_times(p, &medium_s, &medium_i, &correlation, &mut rng_arrival))
        .collect();

    let mut rng_t1 = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        index as u64,
        seed_stage::TRANSMIT_SIGNAL,
    ));
    let pass1 = transmit(&pairs, Arm::Signal, &f, &mut rng_t1);
    let mut rng_t2 = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        index as u64,
        seed_stage::TRANSMIT_IDLER,
    ));
    let pass2 = transmit(&pairs, Arm::Idler, &pi.shifted_to(omega_m), &mut rng_t2);

    let mut photons1 = Vec::new();
    let mut photons2 = Vec::new();
    for (j, pair) in pairs.iter().enumerate() {
        if pass1[j] {
            photons1.push(PhotonArrival::from_pair(pair, Arm::Signal, arrivals[j].0)?);
        }
        if pass2[j] {
            photons2.push(PhotonArrival::from_pair(pair, Arm::Idler, arrivals[j].1)?);
        }
    }
    photons1.sort_unstable_by(|a, b| a.time.total_cmp(&b.time));
    photons2.sort_unstable_by(|a, b| a.time.total_cmp(&b.time));

    let mut rng_d1 =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64, seed_stage::DETECT_1));
    let ref1 = detect(
        &photons1,
        &cfg.detector1_model()?,
        DetectorId::D1,
        dwell,
        cfg.resolution_ps,
        &mut rng_d1,
    )?;
    let mut rng_d2 =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64, seed_stage::DETECT_2));
    let ref2 = detect(
        &photons2,
        &cfg.detector2_model()?,
        DetectorId::D2,
        dwell,
        cfg.resolution_ps,
        &mut rng_d2,
    )?;

    let local1 = apply_clock(&ref1, &cfg.clock1_model()?)?;
    let local2 = apply_clock(&ref2, &cfg.clock2_model()?)?;
    Ok((local1, local2))
}

/// Vertex of the least-squares parabola through `(x, ln y)`; `None` if the
/// system is degenerate or not concave.
fn log_parabola_vertex(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        if !(y > 0.0) {
            return None;
        }
        let u = x - x_mean;
        let w = y.ln();
        s1 += u;
        s2 += u * u;
        s3 += u * u * u;
        s4 += u * u * u * u;
        t0 += w;
        t1 += u * w;
        t2 += u * u * w;
    }
    // Normal equations for w = a u^2 + b u + c.
    let m = [[s4, s3, s2], [s3, s2, s1], [s2, s1, n]];
    let r = [t2, t1, t0];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 {
        return None;
    }
    let col = |k: usize| {
        let mut mm = m;
        for row in 0..3 {
            mm[row][k] = r[row];
        }
        det(&mm) / d
    };
    let a = col(0);
    let b = col(1);
    if !(a < 0.0) {
        return None;
    }
    let vertex = x_mean - b / (2.0 * a);
    vertex.is_finite().then_some(vertex)
}

fn three_point_vertex(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let a = (p0.1 - p1.1) * (p2.0 - p1.0);
    let b = (p2.1 - p1.1) * (p1.0 - p0.0);
    let denom = a + b;
    if denom == 0.0 {
        return p1.0;
    }
    let vertex = p1.0 + 0.5 * (a * (p2.0 - p1.0) - b * (p1.0 - p0.0)) / denom;
    if vertex.is_finite() && vertex >= p0.0 && vertex <= p2.0 {
        vertex
    } else {
        p1.0
    }
}

/// The sample spectrum as recovered from a scan curve: normalized counts
/// replotted against the conjugate wavelength, scaled to unit peak.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    lambdas_nm: Vec<f64>,
    values: Vec<f64>,
}

/// Reverse the frequency axis of a scan curve and peak-normalize it.
///
/// Points use the idler-normalized value where available (which divides out
/// the source density and the monochromator acceptance) and raw coincidences
/// otherwise; an idler-free point can only be coincidence-free, so the two
/// conventions never mix at different scales.
pub fn reconstruct(curve: &ScanCurve) -> Result<Reconstruction> {
    let mut pairs: Vec<(f64, f64)> = curve
        .points()
        .iter()
        .map(|p| (p.lambda_conj_nm, p.normalized.unwrap_or(p.coincidences)))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let peak = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::EmptyReconstruction(
            "no scan point carries a positive value".into(),
        ));
    }
    Ok(Reconstruction {
        lambdas_nm: pairs.iter().map(|p| p.0).collect(),
        values: pairs.iter().map(|p| p.1 / peak).collect(),
    })
}

impl Reconstruction {
    /// Conjugate wavelengths, nm, ascending.
    pub fn lambdas_nm(&self) -> &[f64] {
        &self.lambdas_nm
    }

    /// Peak-normalized values, same order as [`Reconstruction::lambdas_nm`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Peak position refined over the top half of the profile.
    ///
    /// Fits a least-squares parabola to the log of the contiguous run of
    /// samples at or above half maximum around the apex; for a gaussian
    /// profile the log is exactly parabolic, so widening the fit window
    /// averages down count noise without biasing the vertex. Falls back to
    /// a three-point vertex (and ultimately the raw argmax) when the run is
    /// too short or the fit degenerates.
    pub fn peak_lambda_nm(&self) -> f64 {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let half = self.values[i] / 2.0;
        let mut lo = i;
        while lo > 0 && self.values[lo - 1] >= half && self.values[lo - 1] > 0.0 {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < self.values.len() && self.values[hi + 1] >= half && self.values[hi + 1] > 0.0
        {
            hi += 1;
        }

        if hi - lo >= 2 {
            if let Some(vertex) = log_parabola_vertex(
                &self.lambdas_nm[lo..=hi],
                &self.values[lo..=hi],
            ) {
                if vertex >= self.lambdas_nm[lo] && vertex <= self.lambdas_nm[hi] {
                    return vertex;
                }
            }
        }
        if i == 0 || i + 1 == self.values.len() {
            return self.lambdas_nm[i];
        }
        three_point_vertex(
            (self.lambdas_nm[i - 1], self.values[i - 1]),
            (self.lambdas_nm[i], self.values[i]),
            (self.lambdas_nm[i + 1], self.values[i + 1]),
        )
    }

    /// Full width at half of the peak by linear interpolation, `None` when a
    /// crossing is missing on either side.
    pub fn fwhm_nm(&self) -> Option<f64> {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)?;
        let half = self.values[i] / 2.0;
        let mut left = None;
        for j in (1..=i).rev() {
            if self.values[j - 1] < half && self.values[j] >= half {
                let t = (half - self.values[j - 1]) / (self.values[j] - self.values[j - 1]);
                left = Some(self.lambdas_nm[j - 1] + t * (self.lambdas_nm[j] - self.lambdas_nm[j - 1]));
                break;
            }
        }
        let mut right = None;
        for j in i..self.values.len() - 1 {
            if self.values[j] >= half && self.values[j + 1] < half {
                let t = (self.values[j] - half) / (self.values[j] - self.values[j + 1]);
                right =
                    Some(self.lambdas_nm[j] + t * (self.lambdas_nm[j + 1] - self.lambdas_nm[j]));
                break;
            }
        }
        Some(right? - left?)
    }

    /// The recovered spectrum as an amplitude function (square root of the
    /// normalized curve) for feeding back into the simulator.
    pub fn as_function(&self) -> Result<SpectralFunction> {
        let mut omegas = Vec::with_capacity(self.lambdas_nm.len());
        let mut amps = Vec::with_capacity(self.lambdas_nm.len());
        // Ascending wavelength is descending frequency.
        for (lambda, v) in self.lambdas_nm.iter().zip(&self.values).rev() {
            omegas.push(omega_from_lambda_nm(*lambda)?);
            amps.push(num_complex::Complex64::new(v.max(0.0).sqrt(), 0.0));
        }
        SpectralFunction::tabulated(crate::spectra::Table::new(omegas, amps)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ctx = "writing reconstruction csv";
        writeln!(w, "lambda_conj_nm,normalized").map_err(|e| Error::io(ctx, e))?;
        for (lambda, v) in self.lambdas_nm.iter().zip(&self.values) {
            writeln!(w, "{lambda},{v}").map_err(|e| Error::io(ctx, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FunctionSpec, ScanSection};

    fn overridden(pairs: &[(&str, &str)]) -> RunConfig {
        let owned: Vec<(String, String)> = pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        RunConfig::default().with_overrides(&owned).unwrap()
    }

    #[test]
    fn materialize_derives_grid_and_dwell() {
        let cfg = materialize(&RunConfig::default()).unwrap();
        let lo = cfg.scan.lambda_m_min_nm.unwrap();
        let hi = cfg.scan.lambda_m_max_nm.unwrap();
        assert_eq!(lo, conjugate_wavelength(457.9, 880.0).unwrap());
        assert_eq!(hi, conjugate_wavelength(457.9, 820.0).unwrap());
        assert!(lo < hi);

        // The dwell is sized so the best point expects the target count.
        let dwell = cfg.scan.dwell_s.unwrap();
        let engine = AnalyticEngine::new(&cfg).unwrap();
        let peak = scan_grid(&cfg)
            .unwrap()
            .into_iter()
            .map(|l| engine.rates_at(l).unwrap().coincidence)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((dwell * peak - cfg.scan.target_peak_coincidences).abs() < 1e-9);
    }

    #[test]
    fn materialize_is_idempotent() {
        let once = materialize(&RunConfig::default()).unwrap();
        let twice = materialize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn materialize_requires_bounds_for_open_samples() {
        let cfg = RunConfig {
            sample: FunctionSpec::Unit,
            ..RunConfig::default()
        };
        let err = materialize(&cfg).unwrap_err();
        assert!(err.to_string().contains("explicit bounds"), "{err}");
    }

    #[test]
    fn analytic_curve_peaks_at_conjugate_of_sample_center() {
        let curve = analytic_scan(&RunConfig::default()).unwrap();
        let peak = curve
            .points()
            .iter()
            .max_by(|a, b| a.coincidences.total_cmp(&b.coincidences))
            .unwrap();
        let grid_step = curve.points()[1].lambda_m_nm - curve.points()[0].lambda_m_nm;
        let expected = conjugate_wavelength(457.9, 850.0).unwrap();
        assert!(
            (peak.lambda_m_nm - expected).abs() <= grid_step,
            "peak at {} nm, conjugate of sample center at {expected} nm",
            peak.lambda_m_nm
        );
        assert!((peak.lambda_conj_nm - 850.0).abs() <= grid_step);
    }

    #[test]
    fn normalized_curve_is_flat_for_an_open_arm() {
        // With no sample filter and no idler dark floor, the monochromator
        // acceptance cancels exactly in the coincidence-per-idler ratio,
        // leaving the signal-arm detection probability at every setting.
        let mut cfg = RunConfig {
            sample: FunctionSpec::Unit,
            scan: ScanSection {
                lambda_m_min_nm: Some(975.0),
                lambda_m_max_nm: Some(1010.0),
                dwell_s: Some(0.1),
                points: 9,
                ..ScanSection::default()
            },
            ..RunConfig::default()
        };
        cfg.detector2.dark_rate_hz = 0.0;
        let curve = analytic_scan(&cfg).unwrap();
        let values: Vec<f64> = curve
            .points()
            .iter()
            .map(|p| p.normalized.unwrap())
            .collect();
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        assert!(hi - lo < 1e-9 * hi, "normalized spread {lo}..{hi}");
        // Detection probability, degraded a little by dead time, plus a
        // small accidental floor.
        assert!(lo > 0.4 && hi < 0.5, "normalized level {lo}");
    }

    #[test]
    fn reconstruction_reverses_the_frequency_axis() {
        let cfg = RunConfig {
            sample: FunctionSpec::Gaussian {
                center_nm: 853.0,
                fwhm_nm: 10.0,
                peak: 1.0,
            },
            ..RunConfig::default()
        };
        let curve = analytic_scan(&cfg).unwrap();
        let recon = reconstruct(&curve).unwrap();
        assert!((recon.peak_lambda_nm() - 853.0).abs() < 0.05);
        // The monochromator-side peak sits at the conjugate, on the other
        // side of degeneracy.
        let peak_m = curve
            .points()
            .iter()
            .max_by(|a, b| a.coincidences.total_cmp(&b.coincidences))
            .unwrap()
            .lambda_m_nm;
        assert!((peak_m - conjugate_wavelength(457.9, 853.0).unwrap()).abs() < 1.5);
    }

    #[test]
    fn reconstruction_width_shows_instrument_broadening() {
        let recon = reconstruct(&analytic_scan(&RunConfig::default()).unwrap()).unwrap();
        let fwhm = recon.fwhm_nm().unwrap();
        // Intensity width of the 10 nm amplitude-FWHM sample is 10/sqrt(2);
        // the 2 nm monochromator broadens it by a little over 1%.
        assert!(fwhm > 7.05 && fwhm < 7.45, "reconstructed FWHM {fwhm} nm");
    }

    #[test]
    fn peak_normalization_cancels_arm_efficiency() {
        let base = overridden(&[
            ("source.pair_rate_per_s", "1e3"),
            ("window_ns", "0.1"),
            ("detector1.dark_rate_hz", "0"),
            ("detector2.dark_rate_hz", "0"),
            ("detector1.dead_time_ns", "0"),
            ("detector2.dead_time_ns", "0"),
        ]);
        let dimmer = base
            .with_overrides(&[("detector1.efficiency".into(), "0.25".into())])
            .unwrap();
        let r1 = reconstruct(&analytic_scan(&base).unwrap()).unwrap();
        let r2 = reconstruct(&analytic_scan(&dimmer).unwrap()).unwrap();
        for (a, b) in r1.values().iter().zip(r2.values()) {
            assert!((a - b).abs() < 1e-6 * a.max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn scan_csv_has_exact_header_and_empty_missing_cells() {
        let point = ScanPoint {
            lambda_m_nm: 990.0,
            lambda_conj_nm: 851.9,
            singles1: 10.0,
            singles2: 0.0,
            coincidences: 0.0,
            dwell_s: 0.5,
            normalized: None,
        };
        let curve = ScanCurve::new(457.9, vec![point]).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda_M_nm,lambda_conj_nm,singles1,singles2,coinc,dwell_s,normalized"
        );
        let row = lines.next().unwrap();
        assert!(row.ends_with(','), "missing normalized should be empty: {row}");
        assert_eq!(row.matches(',').count(), 6);
    }

    #[test]
    fn curve_rejects_disorder_and_reconstruct_rejects_emptiness() {
        let p = |lambda_m: f64| ScanPoint {
            lambda_m_nm: lambda_m,
            lambda_conj_nm: conjugate_wavelength(457.9, lambda_m).unwrap(),
            singles1: 0.0,
            singles2: 0.0,
            coincidences: 0.0,
            dwell_s: 1.0,
            normalized: None,
        };
        assert!(ScanCurve::new(457.9, vec![]).is_err());
        assert!(ScanCurve::new(457.9, vec![p(992.0), p(990.0)]).is_err());
        let flat = ScanCurve::new(457.9, vec![p(990.0), p(992.0)]).unwrap();
        assert!(matches!(
            reconstruct(&flat),
            Err(Error::EmptyReconstruction(_))
        ));
    }

    #[test]
    fn parabolic_peak_and_interpolated_width_on_a_triangle() {
        let lambdas = [990.0, 992.0, 994.0];
        let values = [0.0, 0.8, 0.0];
        let points: Vec<ScanPoint> = lambdas
            .iter()
            .zip(values)
            .map(|(&lm, v)| ScanPoint {
                lambda_m_nm: lm,
                lambda_conj_nm: conjugate_wavelength(457.9, lm).unwrap(),
                singles1: 1.0,
                singles2: 1.0,
                coincidences: v,
                dwell_s: 1.0,
                normalized: Some(v),
            })
            .collect();
        let recon = reconstruct(&ScanCurve::new(457.9, points).unwrap()).unwrap();
        let conj: Vec<f64> = lambdas
            .iter()
            .rev()
            .map(|&lm| conjugate_wavelength(457.9, lm).unwrap())
            .collect();
        let apex = recon.peak_lambda_nm();
        assert!(apex > conj[0] && apex < conj[2]);
        assert!((apex - conj[1]).abs() < 0.5 * (conj[2] - conj[0]) / 2.0);
        // Linear interpolation puts both half crossings at segment midpoints.
        let expected = 0.5 * (conj[2] - conj[0]);
        let fwhm = recon.fwhm_nm().unwrap();
        assert!((fwhm - expected).abs() < 1e-9, "{fwhm} vs {expected}");
    }

    #[test]
    fn reconstruction_exports_a_usable_amplitude_function() {
        let recon = reconstruct(&analytic_scan(&RunConfig::default()).unwrap()).unwrap();
        let f = recon.as_function().unwrap();
        let peak_omega = omega_from_lambda_nm(recon.peak_lambda_nm()).unwrap();
        // Linear interpolation between ~1 nm nodes rounds the apex off a bit.
        assert!((f.intensity(peak_omega) - 1.0).abs() < 2e-2);
        let (lo, hi) = f.support();
        assert!(lo.is_finite() && hi.is_finite() && lo < peak_omega && peak_omega < hi);
    }

    #[test]
    fn mc_scan_recovers_offset_and_tracks_expectations() {
        let cfg = overridden(&[
            ("source.pair_rate_per_s", "1e6"),
            ("scan.points", "5"),
            ("scan.dwell_s", "0.05"),
            ("alignment.search_range_s", "1e-3"),
            ("clock2.offset_s", "2.5e-4"),
            ("seed", "2024"),
        ]);
        let run = run_scan(&cfg).unwrap();
        assert!(run.alignment.aligned);
        let offset_err_ps = run.alignment.best_offset_ps - 250_000_000;
        assert!(
            offset_err_ps.abs() <= (cfg.window_ns * 1e3 / 2.0) as i64,
            "offset error {offset_err_ps} ps"
        );

        let engine = AnalyticEngine::new(&run.config).unwrap();
        let dwell = run.config.scan.dwell_s.unwrap();
        for p in run.curve.points() {
            let exp = engine.rates_at(p.lambda_m_nm).unwrap();
            for (got, want) in [
                (p.singles1, exp.singles1 * dwell),
                (p.singles2, exp.singles2 * dwell),
                (p.coincidences, exp.coincidence * dwell),
            ] {
                let sigma = want.sqrt().max(1.0);
                assert!(
                    (got - want).abs() < 6.0 * sigma + 1.0,
                    "at {} nm: observed {got}, expected {want}",
                    p.lambda_m_nm
                );
            }
        }
    }
}

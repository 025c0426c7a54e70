//! Acceptance gate. Each test exercises one release criterion end to end at
//! its stated tolerance and prints exactly one PASS/FAIL line (visible with
//! `--nocapture`, or on failure).

use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use remspec::coincidence::{
    align, count_coincidences, difference_histogram, AlignmentParams, CoincidenceWindow,
    PAIR_VISIT_BUDGET,
};
use remspec::config::RunConfig;
use remspec::montecarlo::{generate_pairs, DetuningSampler, SourceConfig};
use remspec::scan::{
    analytic_rates, analytic_scan, materialize, peak_rate_setting, reconstruct, run_scan,
    simulate_setting,
};
use remspec::spectra::{
    compute_psi, conjugate_wavelength, lambda_nm_from_omega, DispersiveMedium, FrequencyGrid,
    SpectralFunction, SPEED_OF_LIGHT,
};
use remspec::timetag::{read_stream, write_stream, DetectorId, EventStream};

/// Pass/fail plumbing: every criterion prints one line, then asserts.
fn report(name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(details) => println!("PASS {name}: {details}"),
        Err(details) => {
            println!("FAIL {name}: {details}");
            panic!("{name}: {details}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

trait Str<T> {
    fn s(self) -> Result<T, String>;
}

impl<T> Str<T> for remspec::Result<T> {
    fn s(self) -> Result<T, String> {
        self.map_err(|e| e.to_string())
    }
}

fn overridden(cfg: &RunConfig, sets: &[(&str, &str)]) -> Result<RunConfig, String> {
    let pairs: Vec<(String, String)> = sets
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    cfg.with_overrides(&pairs).s()
}

/// Interpolated FWHM on an ascending axis; the curve must cross half-max on
/// both sides of its peak.
fn fwhm_on(axis: &[f64], values: &[f64]) -> Result<f64, String> {
    let (imax, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or("empty curve")?;
    ensure!(peak > 0.0, "curve has no positive peak");
    let half = peak / 2.0;
    let cross = |i: usize, j: usize| {
        let t = (half - values[i]) / (values[j] - values[i]);
        axis[i] + t * (axis[j] - axis[i])
    };
    let left = (1..=imax)
        .rev()
        .find(|&i| values[i - 1] < half && values[i] >= half)
        .map(|i| cross(i - 1, i))
        .ok_or("no left half-max crossing")?;
    let right = (imax..values.len() - 1)
        .find(|&i| values[i] >= half && values[i + 1] < half)
        .map(|i| cross(i + 1, i))
        .ok_or("no right half-max crossing")?;
    Ok(right - left)
}

/// First crossing of half the global maximum, interpolated.
fn half_crossing(axis: &[f64], values: &[f64]) -> Result<f64, String> {
    let half = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / 2.0;
    for i in 0..values.len().saturating_sub(1) {
        let (a, b) = (values[i] - half, values[i + 1] - half);
        if a == 0.0 {
            return Err("grid point exactly at half maximum".into());
        }
        if a * b < 0.0 {
            let t = a / (a - b);
            return Ok(axis[i] + t * (axis[i + 1] - axis[i]));
        }
    }
    Err("no half-max crossing".into())
}

// --- criterion 1 -----------------------------------------------------------

/// Width of the sample's intensity transmission convolved with the
/// instrument's intensity response, measured on the conjugate-wavelength
/// axis. Computed by direct numerical convolution, independent of the scan
/// engines.
fn convolution_oracle_fwhm_nm(cfg: &RunConfig) -> Result<f64, String> {
    let omega_s0 = cfg.omega_s0().s()?;
    let f = cfg.sample_function().s()?;
    let center = cfg
        .sample
        .center_nm()
        .ok_or("oracle needs a centered sample")?;
    let lambda_m_peak = conjugate_wavelength(cfg.pump_lambda_nm, center).s()?;
    let pi = cfg.pi_response_at(lambda_m_peak).s()?;

    let f_width = f.fwhm();
    let pi_width = pi.fwhm();
    let inner_half = 4.0 * pi_width;
    let inner_n = 801usize;
    let dpi = 2.0 * inner_half / (inner_n - 1) as f64;
    let outer_half = 2.0 * f_width + inner_half;
    let outer_n = 2001usize;
    let dnu = 2.0 * outer_half / (outer_n - 1) as f64;

    let mut axis = Vec::with_capacity(outer_n);
    let mut values = Vec::with_capacity(outer_n);
    for i in 0..outer_n {
        let nu = -outer_half + i as f64 * dnu;
        let mut acc = 0.0;
        for j in 0..inner_n {
            let x = -inner_half + j as f64 * dpi;
            acc += f.intensity(omega_s0 + nu - x) * pi.intensity(x) * dpi;
        }
        axis.push(lambda_nm_from_omega(omega_s0 + nu).s()?);
        values.push(acc);
    }
    // The frequency axis maps to a descending wavelength axis.
    axis.reverse();
    values.reverse();
    fwhm_on(&axis, &values)
}

#[test]
fn criterion_1_reference_filter_scans() {
    report("criterion 1 (reference filter scans)", (|| {
        let mut details = Vec::new();
        for (center, fwhm) in [(850.0f64, 10.0f64), (885.6, 11.0), (916.0, 10.0)] {
            let cfg = overridden(
                &RunConfig::default(),
                &[
                    ("signal_center_nm", &format!("{center}")),
                    ("sample.center_nm", &format!("{center}")),
                    ("sample.fwhm_nm", &format!("{fwhm}")),
                ],
            )?;
            let started = Instant::now();
            let run = run_scan(&cfg).s()?;
            let elapsed = started.elapsed().as_secs_f64();

            let materialized = &run.config;
            ensure!(
                materialized.scan.points == 60,
                "{center}: expected a 60-point grid"
            );
            let dwell = materialized.scan.dwell_s.unwrap();
            let peak_setting = peak_rate_setting(materialized).s()?;
            let expected_peak_cc = analytic_rates(materialized, peak_setting).s()?.coincidence * dwell;
            ensure!(
                expected_peak_cc >= 400.0,
                "{center}: dwell {dwell:.3} s expects only {expected_peak_cc:.0} peak coincidences"
            );

            let rec = reconstruct(&run.curve).s()?;
            let peak = rec.peak_lambda_nm();
            let width = rec.fwhm_nm().ok_or(format!("{center}: width unresolved"))?;
            let oracle = convolution_oracle_fwhm_nm(materialized)?;

            ensure!(
                (peak - center).abs() <= 1.0,
                "{center}: peak {peak:.3} nm off by more than 1 nm"
            );
            ensure!(
                (width - oracle).abs() <= 1.5,
                "{center}: width {width:.3} nm vs oracle {oracle:.3} nm exceeds 1.5 nm"
            );
            ensure!(
                elapsed < 300.0,
                "{center}: scan took {elapsed:.0} s, over the 5 min budget"
            );
            details.push(format!(
                "{center} nm: peak {peak:.2} nm, width {width:.2} vs oracle {oracle:.2} nm, \
                 {expected_peak_cc:.0} cc expected at peak, {elapsed:.0} s"
            ));
        }
        Ok(details.join("; "))
    })());
}

// --- criterion 2 -----------------------------------------------------------

#[test]
fn criterion_2_edge_filter_maps_mirrored() {
    report("criterion 2 (edge filter frequency reversal)", (|| {
        let edge_nm = 850.0;
        let lo_m = conjugate_wavelength(457.9, 882.0).s()?;
        let hi_m = conjugate_wavelength(457.9, 818.0).s()?;
        let cfg = overridden(
            &RunConfig::default(),
            &[
                ("sample", "{\"shape\":\"edge\",\"position_nm\":850.0}"),
                ("scan.points", "33"),
                ("scan.lambda_m_min_nm", &format!("{lo_m}")),
                ("scan.lambda_m_max_nm", &format!("{hi_m}")),
            ],
        )?;

        let mut details = Vec::new();
        for engine in ["analytic", "monte-carlo"] {
            let curve = if engine == "analytic" {
                analytic_scan(&cfg).s()?
            } else {
                run_scan(&cfg).s()?.curve
            };
            // Short signal wavelengths pass, so on the monochromator axis the
            // transmitted region must sit at long wavelengths: the mirror.
            let pts = curve.points();
            let low_side: f64 = pts[..3].iter().map(|p| p.coincidences).sum();
            let high_side: f64 = pts[pts.len() - 3..].iter().map(|p| p.coincidences).sum();
            ensure!(
                high_side > 10.0 * low_side.max(1.0),
                "{engine}: transmitted side not mirrored ({low_side:.0} vs {high_side:.0})"
            );

            let rec = reconstruct(&curve).s()?;
            let crossing = half_crossing(rec.lambdas_nm(), rec.values())?;
            let step = rec
                .lambdas_nm()
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0f64, f64::max);
            ensure!(
                (crossing - edge_nm).abs() <= step,
                "{engine}: edge read back at {crossing:.2} nm, {step:.2} nm grid"
            );
            details.push(format!(
                "{engine}: edge at {crossing:.2} nm (true {edge_nm}, grid step {step:.2} nm)"
            ));
        }
        Ok(details.join("; "))
    })());
}

// --- criterion 3 -----------------------------------------------------------

#[test]
fn criterion_3_alignment_recovery_and_false_alarms() {
    report("criterion 3 (offset recovery and false alarms)", (|| {
        // Correlated trials: a bright unfiltered setting, timing spread
        // dominated by detector jitter, offsets log-uniform over [1 us, 0.5 s].
        let base = overridden(
            &RunConfig::default(),
            &[
                ("sample", "{\"shape\":\"unit\"}"),
                ("monochromator.resolution_nm", "400"),
                ("monochromator.peak_transmission", "1.0"),
                ("source.pair_rate_per_s", "3e3"),
                ("scan.dwell_s", "1.0"),
                ("detector1.jitter_fwhm_ps", "1800"),
                ("detector2.jitter_fwhm_ps", "1800"),
                ("alignment.search_range_s", "0.6"),
            ],
        )?;
        let lambda_m = conjugate_wavelength(base.pump_lambda_nm, base.signal_center_nm).s()?;
        let quarter_window_ps = (base.window_ns * 1e-9 / 4.0) * 1e12;

        let mut offset_rng = ChaCha8Rng::seed_from_u64(0x0FF5E7);
        let mut recovered = 0usize;
        let mut worst_ps = 0.0f64;
        for trial in 0..100u64 {
            let u: f64 = offset_rng.random();
            let offset_s = 1.0e-6 * (0.5f64 / 1.0e-6).powf(u);
            let cfg = overridden(
                &base,
                &[
                    ("clock2.offset_s", &format!("{offset_s}")),
                    ("seed", &format!("{}", 7_000 + trial)),
                ],
            )?;
            let (s1, s2) = simulate_setting(&cfg, lambda_m).s()?;
            let result = align(&s1, &s2, &cfg.alignment_params().s()?).s()?;
            let err_ps = (result.best_offset_ps as f64 - offset_s * 1e12).abs();
            if result.aligned && err_ps <= quarter_window_ps {
                recovered += 1;
                worst_ps = worst_ps.max(err_ps);
            }
        }
        ensure!(
            recovered >= 95,
            "only {recovered}/100 offsets recovered within {quarter_window_ps} ps"
        );

        // Uncorrelated trials: dark counts only, nothing to align.
        let dark_base = overridden(
            &RunConfig::default(),
            &[
                ("detector1.efficiency", "0"),
                ("detector2.efficiency", "0"),
                ("detector1.dark_rate_hz", "2.5e4"),
                ("detector2.dark_rate_hz", "2.5e4"),
                ("source.pair_rate_per_s", "1e3"),
                ("scan.dwell_s", "2.0"),
            ],
        )?;
        let params = AlignmentParams {
            search_range: 5.0e-3,
            coarse_bin: 2.0e-6,
            window: CoincidenceWindow::new(5.0e-9).s()?,
            significance_threshold: 5.0,
            max_pair_visits: PAIR_VISIT_BUDGET,
        };
        let mut flagged = 0usize;
        for trial in 0..100u64 {
            let cfg = overridden(&dark_base, &[("seed", &format!("{}", 9_000 + trial))])?;
            let (s1, s2) = simulate_setting(&cfg, lambda_m).s()?;
            if !align(&s1, &s2, &params).s()?.aligned {
                flagged += 1;
            }
        }
        ensure!(
            flagged >= 99,
            "only {flagged}/100 uncorrelated trials flagged no-alignment"
        );
        Ok(format!(
            "{recovered}/100 offsets within 1.25 ns (worst {worst_ps:.0} ps), \
             {flagged}/100 uncorrelated runs flagged"
        ))
    })());
}

// --- criterion 4 -----------------------------------------------------------

#[test]
fn criterion_4_oracle_equivalences() {
    report("criterion 4 (oracle equivalences)", (|| {
        // (a) FFT delay amplitude vs direct quadrature at N = 1024.
        let lambda_s = 850.0;
        let omega_s0 = remspec::spectra::omega_from_lambda_nm(lambda_s).s()?;
        let omega_i0 = remspec::spectra::omega_from_lambda_nm(
            conjugate_wavelength(457.9, lambda_s).s()?,
        )
        .s()?;
        let phi = SpectralFunction::gaussian(0.0, 4.0e12, 1.0).s()?;
        let f = SpectralFunction::gaussian(omega_s0, 8.0e12, 0.9).s()?;
        let pi = SpectralFunction::gaussian(0.0, 2.0e12, 0.7).s()?;
        let omega_m = omega_i0 - 1.0e12;
        let m_signal = DispersiveMedium::new(1.0 / SPEED_OF_LIGHT, 2.0e-26, 25.0).s()?;
        let m_idler = DispersiveMedium::new(1.0 / SPEED_OF_LIGHT, 1.0e-26, 10.0).s()?;
        let n = 1024usize;
        let grid = FrequencyGrid::new(omega_s0, omega_i0, 3.2e13, n).s()?;
        let psi = compute_psi(&grid, &phi, &f, &pi, omega_m, &m_signal, &m_idler).s()?;

        let quad = m_signal.quadratic_phase() + m_idler.quadratic_phase();
        let dnu = grid.spacing();
        let scale = dnu / (2.0 * std::f64::consts::PI).sqrt();
        let amps: Vec<Complex64> = (0..n)
            .map(|j| {
                let nu = grid.nu(j);
                phi.value(nu)
                    * f.value(omega_s0 + nu)
                    * pi.value(omega_i0 - nu - omega_m)
                    * Complex64::from_polar(1.0, -quad * nu * nu / 2.0)
            })
            .collect();
        let mut max_err = 0.0f64;
        let mut max_mag = 0.0f64;
        for (k, tau) in psi.taus().enumerate() {
            let mut direct = Complex64::new(0.0, 0.0);
            for (j, a) in amps.iter().enumerate() {
                direct += a * Complex64::from_polar(1.0, -grid.nu(j) * tau);
            }
            direct *= scale;
            max_err = max_err.max((psi.psi()[k] - direct).norm());
            max_mag = max_mag.max(direct.norm());
        }
        let rel_fft = max_err / max_mag;
        ensure!(
            rel_fft <= 1.0e-9,
            "FFT vs quadrature relative deviation {rel_fft:.2e}"
        );

        // (b) Fast difference histogram vs brute-force O(N^2), exact.
        let mut rng = ChaCha8Rng::seed_from_u64(0x44AB);
        let mut make = |count: usize| {
            let set: std::collections::BTreeSet<u64> =
                (0..count).map(|_| rng.random_range(0..500_000_000u64)).collect();
            EventStream::new(DetectorId::D1, 1, 0, set.into_iter().collect()).unwrap()
        };
        let (s1, s2) = (make(1_800), make(2_000));
        let (search_s, bin_s) = (5.0e-5, 1.0e-7);
        let fast = difference_histogram(&s1, &s2, search_s, bin_s).s()?;
        let search_ps = (search_s * 1e12) as i64;
        let bin_ps = (bin_s * 1e12) as i64;
        let mut brute: BTreeMap<i64, u32> = BTreeMap::new();
        for a in s1.times_ps() {
            for b in s2.times_ps() {
                let d = b as i64 - a as i64;
                if d.abs() <= search_ps {
                    *brute
                        .entry(remspec::coincidence::DifferenceHistogram::bin_index(d, bin_ps))
                        .or_insert(0) += 1;
                }
            }
        }
        let mut histogram_pairs = 0u64;
        for idx in 0..fast.len() {
            let k = remspec::coincidence::DifferenceHistogram::bin_index(
                fast.offset_ps(idx),
                bin_ps,
            );
            ensure!(
                fast.counts()[idx] == brute.get(&k).copied().unwrap_or(0),
                "histogram bin {k} disagrees with brute force"
            );
            histogram_pairs += fast.counts()[idx] as u64;
        }
        let brute_pairs: u64 = brute.values().map(|&c| c as u64).sum();
        ensure!(
            histogram_pairs == brute_pairs,
            "histogram totals differ: {histogram_pairs} vs {brute_pairs}"
        );

        // (c) Monte Carlo scan totals vs the analytic engine, 4 sigma per
        // point for singles and coincidences.
        let cfg = overridden(&RunConfig::default(), &[("scan.points", "15")])?;
        let materialized = materialize(&cfg).s()?;
        let expected = analytic_scan(&materialized).s()?;
        let observed = run_scan(&materialized).s()?.curve;
        let mut worst_z = 0.0f64;
        for (e, o) in expected.points().iter().zip(observed.points()) {
            for (label, exp, obs) in [
                ("singles1", e.singles1, o.singles1),
                ("singles2", e.singles2, o.singles2),
                ("coincidences", e.coincidences, o.coincidences),
            ] {
                let z = (obs - exp).abs() / exp.sqrt();
                worst_z = worst_z.max(z);
                ensure!(
                    z <= 4.0,
                    "{label} at {:.2} nm: observed {obs:.0} vs expected {exp:.1} is {z:.1} sigma",
                    e.lambda_m_nm
                );
            }
        }
        Ok(format!(
            "FFT vs quadrature {rel_fft:.1e} rel, histogram exact over {brute_pairs} pairs, \
             scan worst deviation {worst_z:.2} sigma over 15 points"
        ))
    })());
}

// --- criterion 5 -----------------------------------------------------------

#[test]
fn criterion_5_dispersion_cancellation() {
    report("criterion 5 (dispersion cancellation)", (|| {
        let omega_s0 = remspec::spectra::omega_from_lambda_nm(850.0).s()?;
        let omega_i0 = remspec::spectra::omega_from_lambda_nm(
            conjugate_wavelength(457.9, 850.0).s()?,
        )
        .s()?;
        let phi = SpectralFunction::gaussian(0.0, 5.0e12, 1.0).s()?;
        let unit = SpectralFunction::unit();
        let grid = FrequencyGrid::new(omega_s0, omega_i0, 4.0e13, 4096).s()?;
        let vacuum = DispersiveMedium::vacuum();
        let psi = |sig: &DispersiveMedium, idl: &DispersiveMedium| {
            compute_psi(&grid, &phi, &unit, &unit, omega_i0, sig, idl).s()
        };

        let baseline = psi(&vacuum, &vacuum)?;
        let w0 = baseline.g2_fwhm().ok_or("baseline width unresolved")?;

        // 50 m of one arm's dispersive fiber.
        let gvd = 2.0e-26;
        let length = 50.0;
        let dispersive = DispersiveMedium::new(1.0 / SPEED_OF_LIGHT, gvd, length).s()?;
        let broadened = psi(&dispersive, &vacuum)?;
        let w_broad = broadened.g2_fwhm().ok_or("broadened width unresolved")?;
        ensure!(
            w_broad >= 3.0 * w0,
            "dispersion broadened {:.2}x, need at least 3x",
            w_broad / w0
        );

        // Equal-magnitude, opposite-sign dispersion in the other arm: the
        // phase exponent sums to exactly zero, so the restoration is exact.
        let compensating = DispersiveMedium::new(1.0 / SPEED_OF_LIGHT, -gvd, length).s()?;
        let restored = psi(&dispersive, &compensating)?;
        let peak = baseline.psi().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let max_dev = restored
            .psi()
            .iter()
            .zip(baseline.psi())
            .map(|(r, b)| (r - b).norm())
            .fold(0.0, f64::max);
        ensure!(
            max_dev <= 1.0e-9 * peak,
            "restored amplitude deviates by {:.2e} of peak",
            max_dev / peak
        );
        Ok(format!(
            "broadening {:.1}x, restored pointwise deviation {:.1e} of peak",
            w_broad / w0,
            max_dev / peak
        ))
    })());
}

// --- criterion 6 -----------------------------------------------------------

#[test]
fn criterion_6_conservation_and_statistics() {
    report("criterion 6 (conservation and statistics)", (|| {
        // (a) Per-pair energy conservation, bit-exact.
        let cfg = RunConfig::default();
        let source = SourceConfig {
            pair_rate: 4.0e5,
            duration: 0.05,
            omega_p: cfg.omega_p().s()?,
            omega_s0: cfg.omega_s0().s()?,
            omega_i0: cfg.omega_i0().s()?,
            phi: cfg.phi_function().s()?,
            rng_seed: 2_718,
        };
        let pairs = generate_pairs(&source).s()?;
        for p in &pairs {
            ensure!(
                p.omega_s + p.omega_i == source.omega_p,
                "energy violation at nu {:.3e}",
                p.nu
            );
        }

        // (b) Parseval: delay-side and frequency-side integrals agree.
        let omega_s0 = source.omega_s0;
        let omega_i0 = source.omega_i0;
        let vacuum = DispersiveMedium::vacuum();
        let mut worst_parseval = 0.0f64;
        for shape in [
            SpectralFunction::gaussian(0.0, 5.0e12, 1.0).s()?,
            SpectralFunction::rectangle(0.0, 2.0e13, 0.8).s()?,
        ] {
            let grid = FrequencyGrid::new(omega_s0, omega_i0, 3.2e14, 8192).s()?;
            let psi = compute_psi(
                &grid,
                &shape,
                &SpectralFunction::gaussian(omega_s0, 3.0e13, 1.0).s()?,
                &SpectralFunction::unit(),
                omega_i0,
                &vacuum,
                &vacuum,
            )
            .s()?;
            let drift =
                ((psi.g2_integral() - psi.spectral_integral()) / psi.spectral_integral()).abs();
            worst_parseval = worst_parseval.max(drift);
            ensure!(drift <= 1.0e-9, "Parseval drift {drift:.2e}");
        }

        // (c) Detuning samples vs the squared envelope, Kolmogorov-Smirnov
        // at alpha = 0.01 with fixed seeds, against closed-form CDFs.
        let n = 20_000usize;
        let critical = 1.6276 / (n as f64).sqrt();
        let mut worst_ks = 0.0f64;
        for (label, phi, cdf) in [
            (
                "rectangle",
                cfg.phi_function().s()?,
                Box::new(|nu: f64, sampler: &DetuningSampler| {
                    let (lo, hi) = sampler.support();
                    ((nu - lo) / (hi - lo)).clamp(0.0, 1.0)
                }) as Box<dyn Fn(f64, &DetuningSampler) -> f64>,
            ),
            (
                "gaussian",
                SpectralFunction::gaussian(0.0, 5.0e12, 1.0).s()?,
                Box::new(|nu: f64, _: &DetuningSampler| {
                    // Intensity of an amplitude gaussian with FWHM w is a
                    // normal density with sigma = w / (4 sqrt(ln 2)).
                    let sigma = 5.0e12 / (4.0 * (2.0f64.ln()).sqrt());
                    0.5 * (1.0 + libm::erf(nu / (sigma * 2.0f64.sqrt())))
                }),
            ),
        ] {
            let sampler = DetuningSampler::new(&phi).s()?;
            let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
            let mut nus: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
            nus.sort_by(|a, b| a.total_cmp(b));
            let mut d = 0.0f64;
            for (i, &nu) in nus.iter().enumerate() {
                let model = cdf(nu, &sampler);
                d = d.max((model - i as f64 / n as f64).abs());
                d = d.max(((i + 1) as f64 / n as f64 - model).abs());
            }
            worst_ks = worst_ks.max(d / critical);
            ensure!(
                d <= critical,
                "{label}: KS statistic {d:.4} above the alpha=0.01 critical {critical:.4}"
            );
        }

        // (d) Accidental coincidences between independent Poisson streams.
        let (r1, r2, duration, width) = (6.0e4, 5.0e4, 1.0, 5.0e-9);
        let poisson = |rate: f64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gap = Exp::new(rate).unwrap();
            let mut times = Vec::new();
            let mut t: f64 = gap.sample(&mut rng);
            while t < duration {
                times.push(t);
                t += gap.sample(&mut rng);
            }
            EventStream::from_times_s(DetectorId::D1, 1, duration, &times).unwrap()
        };
        let (s1, s2) = (poisson(r1, 61), poisson(r2, 62));
        let window = CoincidenceWindow::new(width).s()?;
        let count = count_coincidences(&s1, &s2, 0.0, &window).s()? as f64;
        let expected = r1 * r2 * duration * width;
        let z = (count - expected).abs() / expected.sqrt();
        ensure!(
            z <= 5.0,
            "accidental count {count} vs {expected} is {z:.1} sigma"
        );

        Ok(format!(
            "{} pairs energy-exact, Parseval {worst_parseval:.1e}, \
             KS worst {:.2} of critical, accidentals {z:.1} sigma",
            pairs.len(),
            worst_ks
        ))
    })());
}

// --- criterion 7 -----------------------------------------------------------

#[test]
fn criterion_7_wire_format_and_reproducibility() {
    report("criterion 7 (wire format and reproducibility)", (|| {
        // (a) 1000 random streams survive a write/read/write cycle with
        // byte-identical output.
        let mut rng = ChaCha8Rng::seed_from_u64(0x77A6);
        for trial in 0..1000 {
            let detector = if rng.random::<bool>() { DetectorId::D1 } else { DetectorId::D2 };
            let resolution: u32 = rng.random_range(1..=1000);
            let len = rng.random_range(0..400usize);
            let mut tick = 0u64;
            let ticks: Vec<u64> = (0..len)
                .map(|_| {
                    tick += rng.random_range(1..=1_000_000_000u64);
                    tick
                })
                .collect();
            let duration = rng.random_range(0..=u64::from(u32::MAX));
            let stream = EventStream::new(detector, resolution, duration, ticks)
                .map_err(|e| e.to_string())?;
            let mut first = Vec::new();
            write_stream(&stream, &mut first).s()?;
            let parsed = read_stream(first.as_slice()).s()?;
            ensure!(parsed == stream, "stream {trial} changed across the round trip");
            let mut second = Vec::new();
            write_stream(&parsed, &mut second).s()?;
            ensure!(first == second, "stream {trial} bytes changed across the round trip");
        }

        // (b) A full pipeline rerun from the config snapshot reproduces the
        // run byte for byte.
        let cfg = overridden(
            &RunConfig::default(),
            &[
                ("source.pair_rate_per_s", "1e6"),
                ("scan.points", "5"),
                ("scan.dwell_s", "0.05"),
                ("alignment.search_range_s", "1e-3"),
                ("clock2.offset_s", "2.5e-4"),
                ("seed", "4242"),
            ],
        )?;
        let first_run = run_scan(&cfg).s()?;
        let snapshot = first_run.config.to_json_string();
        let reloaded = RunConfig::from_json_str(&snapshot).s()?;
        let second_run = run_scan(&reloaded).s()?;

        let resnapshot = second_run.config.to_json_string();
        if resnapshot != snapshot {
            let diff = snapshot
                .lines()
                .zip(resnapshot.lines())
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{a:?} vs {b:?}"))
                .unwrap_or_else(|| "length mismatch".into());
            return Err(format!("snapshot drifted across the rerun: {diff}"));
        }
        ensure!(
            first_run.alignment.best_offset_ps == second_run.alignment.best_offset_ps,
            "alignment differs across the rerun"
        );
        let csv = |curve: &remspec::ScanCurve| -> Result<Vec<u8>, String> {
            let mut buf = Vec::new();
            curve.write_csv(&mut buf).s()?;
            Ok(buf)
        };
        ensure!(
            csv(&first_run.curve)? == csv(&second_run.curve)?,
            "scan curve differs across the rerun"
        );
        let lambda = peak_rate_setting(&first_run.config).s()?;
        let bytes = |cfg: &RunConfig| -> Result<(Vec<u8>, Vec<u8>), String> {
            let (s1, s2) = simulate_setting(cfg, lambda).s()?;
            let (mut b1, mut b2) = (Vec::new(), Vec::new());
            write_stream(&s1, &mut b1).s()?;
            write_stream(&s2, &mut b2).s()?;
            Ok((b1, b2))
        };
        ensure!(
            bytes(&first_run.config)? == bytes(&second_run.config)?,
            "time-tag streams differ across the rerun"
        );
        Ok("1000 stream round trips byte-identical, pipeline rerun from snapshot \
            byte-identical"
            .into())
    })());
}

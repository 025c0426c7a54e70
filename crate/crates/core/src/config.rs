//! One JSON document configures the whole pipeline.
//!
//! Defaults reproduce the desk-scale narrowband-filter measurement: 457.9 nm
//! pump, a 10 nm gaussian sample filter at 850 nm on the signal arm, a 2 nm
//! monochromator scanning the conjugate band, and realistic counting
//! hardware. Any field can be overridden from a partial JSON file or a
//! dotted-path `--set` flag; a fully materialized copy of the config is
//! written next to every run's outputs so reruns are byte-reproducible.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coincidence::{AlignmentParams, CoincidenceWindow, PAIR_VISIT_BUDGET};
use crate::error::{Error, Result};
use crate::instruments::DetectorModel;
use crate::spectra::{
    bandwidth_rad_s, omega_from_lambda_nm, DispersiveMedium, SpectralFunction,
};
use crate::timetag::ClockModel;

fn default_peak() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pump_lambda_nm: f64,
    /// Center of the signal band; the idler band center is its conjugate.
    pub signal_center_nm: f64,
    /// Reference-clock timestamp quantization, ps.
    pub resolution_ps: u32,
    /// Full coincidence window, ns.
    pub window_ns: f64,
    /// Master seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    pub source: SourceSection,
    /// Spectral function on the signal arm (the quantity under measurement).
    pub sample: FunctionSpec,
    pub monochromator: MonochromatorSection,
    pub detector1: DetectorSection,
    pub detector2: DetectorSection,
    pub clock1: ClockSection,
    pub clock2: ClockSection,
    pub alignment: AlignmentSection,
    pub scan: ScanSection,
    pub dispersion: DispersionSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pump_lambda_nm: 457.9,
            signal_center_nm: 850.0,
            resolution_ps: 1,
            window_ns: 5.0,
            seed: 1_234_567,
            source: SourceSection::default(),
            sample: FunctionSpec::default(),
            monochromator: MonochromatorSection::default(),
            detector1: DetectorSection::default(),
            detector2: DetectorSection::default(),
            clock1: ClockSection::default(),
            clock2: ClockSection::default(),
            alignment: AlignmentSection::default(),
            scan: ScanSection::default(),
            dispersion: DispersionSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub pair_rate_per_s: f64,
    pub phi: PhiSpec,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            pair_rate_per_s: 5.0e6,
            phi: PhiSpec::default(),
        }
    }
}

/// Pump envelope over detuning, specified as an equivalent wavelength width
/// at the signal band center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiSpec {
    pub shape: BandShape,
    pub width_nm: f64,
    pub peak: f64,
}

impl Default for PhiSpec {
    fn default() -> Self {
        PhiSpec {
            shape: BandShape::Rectangle,
            width_nm: 90.0,
            peak: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandShape {
    Rectangle,
    Gaussian,
}

/// A spectral function described in wavelength terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FunctionSpec {
    Gaussian {
        center_nm: f64,
        fwhm_nm: f64,
        #[serde(default = "default_peak")]
        peak: f64,
    },
    Rectangle {
        center_nm: f64,
        width_nm: f64,
        #[serde(default = "default_peak")]
        peak: f64,
    },
    Edge {
        position_nm: f64,
        #[serde(default = "default_peak")]
        peak: f64,
        /// Pass wavelengths longer than `position_nm` (frequencies below the
        /// edge). Default passes the short-wavelength side.
        #[serde(default)]
        pass_long_wavelengths: bool,
    },
    /// Open channel; nothing in the arm.
    Unit,
    /// Amplitude/phase table from a CSV file (`lambda_nm` or `omega_rad_s`
    /// abscissa, `amplitude`, optional `phase_rad`).
    Tabulated { path: String },
}

impl Default for FunctionSpec {
    fn default() -> Self {
        FunctionSpec::Gaussian {
            center_nm: 850.0,
            fwhm_nm: 10.0,
            peak: 1.0,
        }
    }
}

impl FunctionSpec {
    pub fn build(&self) -> Result<SpectralFunction> {
        match self {
            FunctionSpec::Gaussian {
                center_nm,
                fwhm_nm,
                peak,
            } => SpectralFunction::gaussian(
                omega_from_lambda_nm(*center_nm)?,
                bandwidth_rad_s(*fwhm_nm, *center_nm)?,
                *peak,
            ),
            FunctionSpec::Rectangle {
                center_nm,
                width_nm,
                peak,
            } => SpectralFunction::rectangle(
                omega_from_lambda_nm(*center_nm)?,
                bandwidth_rad_s(*width_nm, *center_nm)?,
                *peak,
            ),
            FunctionSpec::Edge {
                position_nm,
                peak,
                pass_long_wavelengths,
            } => SpectralFunction::edge_directed(
                omega_from_lambda_nm(*position_nm)?,
                *peak,
                // Long wavelengths are low frequencies.
                !*pass_long_wavelengths,
            ),
            FunctionSpec::Unit => Ok(SpectralFunction::unit()),
            FunctionSpec::Tabulated { path } => {
                let file = File::open(path)
                    .map_err(|e| Error::io(format!("opening sample table {path}"), e))?;
                SpectralFunction::from_csv(BufReader::new(file))
            }
        }
    }

    /// Wavelength center, when the shape has one.
    pub fn center_nm(&self) -> Option<f64> {
        match self {
            FunctionSpec::Gaussian { center_nm, .. }
            | FunctionSpec::Rectangle { center_nm, .. } => Some(*center_nm),
            FunctionSpec::Edge { position_nm, .. } => Some(*position_nm),
            _ => None,
        }
    }

    /// Wavelength FWHM, when finite.
    pub fn fwhm_nm(&self) -> Option<f64> {
        match self {
            FunctionSpec::Gaussian { fwhm_nm, .. } => Some(*fwhm_nm),
            FunctionSpec::Rectangle { width_nm, .. } => Some(*width_nm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonochromatorSection {
    /// Passband amplitude FWHM, nm (converted to rad/s at each scan point).
    pub resolution_nm: f64,
    pub peak_transmission: f64,
    pub response_shape: BandShape,
}

impl Default for MonochromatorSection {
    fn default() -> Self {
        MonochromatorSection {
            resolution_nm: 2.0,
            peak_transmission: 0.3,
            response_shape: BandShape::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ns: f64,
    pub efficiency_slope_per_nm: f64,
    pub lambda_ref_nm: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            efficiency: 0.5,
            dark_rate_hz: 100.0,
            jitter_fwhm_ps: 350.0,
            dead_time_ns: 50.0,
            efficiency_slope_per_nm: 0.0,
            lambda_ref_nm: 0.0,
        }
    }
}

impl DetectorSection {
    fn build(&self, path: &str) -> Result<DetectorModel> {
        let base = DetectorModel::new(
            self.efficiency,
            self.dark_rate_hz,
            self.jitter_fwhm_ps * 1e-12,
            self.dead_time_ns * 1e-9,
        )
        .and_then(|m| {
            if self.efficiency_slope_per_nm == 0.0 {
                Ok(m)
            } else {
                m.with_tilt(self.efficiency_slope_per_nm, self.lambda_ref_nm)
            }
        });
        base.map_err(|e| Error::config(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockSection {
    pub offset_s: f64,
    pub drift: f64,
    pub resolution_ps: u32,
}

impl Default for ClockSection {
    fn default() -> Self {
        ClockSection {
            offset_s: 0.0,
            drift: 0.0,
            resolution_ps: 1,
        }
    }
}

impl ClockSection {
    fn build(&self, path: &str) -> Result<ClockModel> {
        ClockModel::new(self.offset_s, self.drift, self.resolution_ps as f64 * 1e-12)
            .map_err(|e| Error::config(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    pub search_range_s: f64,
    pub coarse_bin_ns: f64,
    pub significance_threshold: f64,
    pub max_pair_visits: f64,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection {
            search_range_s: 1.0,
            coarse_bin_ns: 100.0,
            significance_threshold: 5.0,
            max_pair_visits: PAIR_VISIT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub points: usize,
    /// Monochromator grid bounds, nm. Both present, or both absent to derive
    /// them from the sample spec (conjugate of its center ± 3 FWHM).
    pub lambda_m_min_nm: Option<f64>,
    pub lambda_m_max_nm: Option<f64>,
    /// Per-point dwell, s; absent means size it from the expected peak rate.
    pub dwell_s: Option<f64>,
    /// Expected coincidences in the peak bin used to derive the dwell.
    pub target_peak_coincidences: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            points: 60,
            lambda_m_min_nm: None,
            lambda_m_max_nm: None,
            dwell_s: None,
            target_peak_coincidences: 750.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionSection {
    pub signal: MediumSpec,
    pub idler: MediumSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MediumSpec {
    pub inverse_group_velocity_s_per_m: f64,
    pub gvd_s2_per_m: f64,
    pub length_m: f64,
}

impl MediumSpec {
    fn build(&self, path: &str) -> Result<DispersiveMedium> {
        DispersiveMedium::new(
            self.inverse_group_velocity_s_per_m,
            self.gvd_s2_per_m,
            self.length_m,
        )
        .map_err(|e| Error::config(path, e.to_string()))
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_json_str(&text)
    }

    /// Stable pretty JSON; identical configs serialize to identical bytes.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn omega_p(&self) -> Result<f64> {
        omega_from_lambda_nm(self.pump_lambda_nm)
    }

    pub fn omega_s0(&self) -> Result<f64> {
        omega_from_lambda_nm(self.signal_center_nm)
    }

    /// Idler band center, rad/s; the conjugate of the signal center.
    pub fn omega_i0(&self) -> Result<f64> {
        let omega_i0 = self.omega_p()? - self.omega_s0()?;
        if !(omega_i0 > 0.0) {
            return Err(Error::config(
                "signal_center_nm",
                "signal band must be red of the pump",
            ));
        }
        Ok(omega_i0)
    }

    /// Pump envelope as a function of detuning (centered at zero).
    pub fn phi_function(&self) -> Result<SpectralFunction> {
        let width = bandwidth_rad_s(self.source.phi.width_nm, self.signal_center_nm)
            .map_err(|e| Error::config("source.phi.width_nm", e.to_string()))?;
        match self.source.phi.shape {
            BandShape::Rectangle => SpectralFunction::rectangle(0.0, width, self.source.phi.peak),
            BandShape::Gaussian => SpectralFunction::gaussian(0.0, width, self.source.phi.peak),
        }
        .map_err(|e| Error::config("source.phi", e.to_string()))
    }

    pub fn sample_function(&self) -> Result<SpectralFunction> {
        self.sample
            .build()
            .map_err(|e| Error::config("sample", e.to_string()))
    }

    /// Monochromator passband centered at zero detuning, with its width
    /// converted from nm at the given setting.
    pub fn pi_response_at(&self, lambda_m_nm: f64) -> Result<SpectralFunction> {
        let width = bandwidth_rad_s(self.monochromator.resolution_nm, lambda_m_nm)
            .map_err(|e| Error::config("monochromator.resolution_nm", e.to_string()))?;
        match self.monochromator.response_shape {
            BandShape::Gaussian => {
                SpectralFunction::gaussian(0.0, width, self.monochromator.peak_transmission)
            }
            BandShape::Rectangle => {
                SpectralFunction::rectangle(0.0, width, self.monochromator.peak_transmission)
            }
        }
        .map_err(|e| Error::config("monochromator", e.to_string()))
    }

    pub fn detector1_model(&self) -> Result<DetectorModel> {
        self.detector1.build("detector1")
    }

    pub fn detector2_model(&self) -> Result<DetectorModel> {
        self.detector2.build("detector2")
    }

    pub fn clock1_model(&self) -> Result<ClockModel> {
        self.clock1.build("clock1")
    }

    pub fn clock2_model(&self) -> Result<ClockModel> {
        self.clock2.build("clock2")
    }

    pub fn window(&self) -> Result<CoincidenceWindow> {
        CoincidenceWindow::new(self.window_ns * 1e-9)
            .map_err(|e| Error::config("window_ns", e.to_string()))
    }

    pub fn alignment_params(&self) -> Result<AlignmentParams> {
        let params = AlignmentParams {
            search_range: self.alignment.search_range_s,
            coarse_bin: self.alignment.coarse_bin_ns * 1e-9,
            window: self.window()?,
            significance_threshold: self.alignment.significance_threshold,
            max_pair_visits: self.alignment.max_pair_visits,
        };
        params
            .validate()
            .map_err(|e| Error::config("alignment", e.to_string()))?;
        Ok(params)
    }

    pub fn signal_medium(&self) -> Result<DispersiveMedium> {
        self.dispersion.signal.build("dispersion.signal")
    }

    pub fn idler_medium(&self) -> Result<DispersiveMedium> {
        self.dispersion.idler.build("dispersion.idler")
    }

    /// Cross-field validation; every builder must succeed.
    pub fn validate(&self) -> Result<()> {
        if self.resolution_ps == 0 {
            return Err(Error::config("resolution_ps", "must be at least 1"));
        }
        if !(self.source.pair_rate_per_s > 0.0) || !self.source.pair_rate_per_s.is_finite() {
            return Err(Error::config(
                "source.pair_rate_per_s",
                "must be positive and finite",
            ));
        }
        self.omega_i0()?;
        self.phi_function()?;
        self.sample_function()?;
        self.pi_response_at(self.pump_lambda_nm * 2.0)?;
        self.detector1_model()?;
        self.detector2_model()?;
        self.clock1_model()?;
        self.clock2_model()?;
        self.window()?;
        self.alignment_params()?;
        self.signal_medium()?;
        self.idler_medium()?;

        if self.scan.points == 0 {
            return Err(Error::config("scan.points", "at least one point required"));
        }
        match (self.scan.lambda_m_min_nm, self.scan.lambda_m_max_nm) {
            (Some(lo), Some(hi)) => {
                if !(lo > 0.0 && hi > lo) {
                    return Err(Error::config(
                        "scan.lambda_m_min_nm",
                        "grid bounds must satisfy 0 < min < max",
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "scan.lambda_m_min_nm",
                    "set both grid bounds or neither",
                ));
            }
        }
        if let Some(dwell) = self.scan.dwell_s {
            if !(dwell > 0.0) || !dwell.is_finite() {
                return Err(Error::config("scan.dwell_s", "must be positive and finite"));
            }
        }
        if !(self.scan.target_peak_coincidences >= 1.0) {
            return Err(Error::config(
                "scan.target_peak_coincidences",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    /// Apply `path=json_value` overrides (dotted paths into the serialized
    /// tree) and revalidate.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for (path, raw) in overrides {
            let value: Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| Value::String(raw.clone()));
            set_dotted(&mut tree, path, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree)
            .map_err(|e| Error::config("<overrides>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_dotted(tree: &mut Value, dotted: &str, new: Value) -> Result<()> {
    let mut cursor = tree;
    let segments: Vec<&str> = dotted.split('.').collect();
    if segments.is_empty() || dotted.is_empty() {
        return Err(Error::config(dotted, "empty override path"));
    }
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match cursor {
            Value::Object(map) => {
                // Every addressable key already exists in the serialized
                // tree (optional fields serialize as null, enum variants are
                // switched by replacing the whole subtree), so a missing key
                // is always a typo.
                let slot = map.get_mut(*seg).ok_or_else(|| {
                    Error::config(dotted, format!("unknown config path segment '{seg}'"))
                })?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                cursor = slot;
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::config(dotted, format!("'{seg}' is not an array index"))
                })?;
                if idx >= items.len() {
                    return Err(Error::config(dotted, format!("index {idx} out of range")));
                }
                if last {
                    items[idx] = new;
                    return Ok(());
                }
                cursor = &mut items[idx];
            }
            _ => {
                return Err(Error::config(
                    dotted,
                    format!("'{seg}' does not address an object or array"),
                ));
            }
        }
    }
    Ok(())
}

/// Derive an independent RNG seed for one stochastic stage of one scan
/// point. SplitMix-style finalizer over the mixed inputs; any change to any
/// input decorrelates the whole stream.
pub fn derive_seed(master: u64, index: u64, stage: u64) -> u64 {
    let mut z = master
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stage.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stage identifiers for [`derive_seed`].
pub mod seed_stage {
    pub const SOURCE: u64 = 1;
    pub const ARRIVAL: u64 = 2;
    pub const TRANSMIT_SIGNAL: u64 = 3;
    pub const TRANSMIT_IDLER: u64 = 4;
    pub const DETECT_1: u64 = 5;
    pub const DETECT_2: u64 = 6;
}

//! C ABI over the simulator: opaque handles, integer status codes, and a
//! thread-local error message. The matching header is generated into
//! `include/remspec.h` at build time.
//!
//! Conventions:
//! - Every fallible call returns [`RemspecStatus`]; `REMSPEC_OK` is zero.
//! - Output parameters are written only on success.
//! - On failure, [`remspec_last_error`] returns a message for the current
//!   thread, valid until the next failing call on that thread.
//! - Handles are freed exactly once with their `_free` function; all `_free`
//!   functions accept null.
//! - String and array getters use a two-call pattern: pass a null buffer to
//!   learn the required length, then call again with storage.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use remspec::coincidence::{align, count_coincidences, AlignmentParams, CoincidenceWindow};
use remspec::config::RunConfig;
use remspec::error::Error;
use remspec::scan::{self, ScanCurve};
use remspec::timetag::{read_ttag, write_ttag, EventStream};

/// Result of every fallible call. Values above `REMSPEC_ERR_IO` refine the
/// CLI's exit-code scheme with binding-level failures.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemspecStatus {
    RemspecOk = 0,
    /// Invalid configuration (bad field value, unknown key, bad override path).
    RemspecErrConfig = 2,
    /// Correlation peak below the significance threshold.
    RemspecErrNoAlignment = 3,
    /// File system or wire-format failure.
    RemspecErrIo = 4,
    /// Domain error outside configuration handling.
    RemspecErrDomain = 5,
    /// A required pointer argument was null.
    RemspecErrNullArgument = 6,
    /// A string argument was not valid UTF-8.
    RemspecErrUtf8 = 7,
    /// The provided buffer is too small; retry with the reported length.
    RemspecErrBufferTooSmall = 8,
    /// An internal panic was caught at the boundary.
    RemspecErrPanic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> RemspecStatus {
    match e {
        Error::Config { .. } => RemspecStatus::RemspecErrConfig,
        Error::NoAlignment { .. } => RemspecStatus::RemspecErrNoAlignment,
        Error::Io { .. } | Error::Format(_) => RemspecStatus::RemspecErrIo,
        _ => RemspecStatus::RemspecErrDomain,
    }
}

fn fail(e: Error) -> RemspecStatus {
    set_error(&e.to_string());
    status_of(&e)
}

/// Run `body` under a panic guard; a panic never crosses the boundary.
fn guarded(body: impl FnOnce() -> RemspecStatus) -> RemspecStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            RemspecStatus::RemspecErrPanic
        }
    }
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(concat!("null argument: ", stringify!($ptr)));
            return RemspecStatus::RemspecErrNullArgument;
        }
    };
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, RemspecStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error("argument is not valid UTF-8");
            Err(RemspecStatus::RemspecErrUtf8)
        }
    }
}

/// Opaque run configuration.
pub struct RemspecConfig {
    inner: RunConfig,
}

/// Opaque time-tag stream.
pub struct RemspecStream {
    inner: EventStream,
}

/// Opaque scan curve (one record per monochromator setting).
pub struct RemspecCurve {
    inner: ScanCurve,
}

/// One scan record. `normalized` is NaN when the point had no idler counts.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RemspecScanPoint {
    pub lambda_m_nm: f64,
    pub lambda_conj_nm: f64,
    pub singles1: f64,
    pub singles2: f64,
    pub coincidences: f64,
    pub dwell_s: f64,
    pub normalized: f64,
}

/// Outcome of an offset search.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RemspecAlignment {
    /// Recovered offset of stream 2 relative to stream 1, ps.
    pub offset_ps: i64,
    /// Coarse-histogram count at the peak.
    pub peak_count: u64,
    /// Mean coarse count away from the peak.
    pub background_mean: f64,
    /// `(peak - background) / sqrt(max(background, 1))`.
    pub significance: f64,
    /// Matched-pair count at the refined offset.
    pub refined_count: u64,
    /// 1 if the peak cleared the threshold, else 0.
    pub aligned: u8,
}

/// Message describing the most recent failure on this thread; empty string
/// when nothing failed yet. The pointer stays valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn remspec_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn remspec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create a config with the built-in reference profile.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle that must
/// be released with [`remspec_config_free`].
#[no_mangle]
pub unsafe extern "C" fn remspec_config_default(out: *mut *mut RemspecConfig) -> RemspecStatus {
    require!(out);
    guarded(|| {
        let cfg = Box::new(RemspecConfig {
            inner: RunConfig::default(),
        });
        *out = Box::into_raw(cfg);
        RemspecStatus::RemspecOk
    })
}

/// Parse a config from JSON; missing fields fall back to the reference
/// profile and the result is validated.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` as in
/// [`remspec_config_default`].
#[no_mangle]
pub unsafe extern "C" fn remspec_config_from_json(
    json: *const c_char,
    out: *mut *mut RemspecConfig,
) -> RemspecStatus {
    require!(json);
    require!(out);
    guarded(|| {
        let text = match utf8_arg(json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match RunConfig::from_json_str(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RemspecConfig { inner }));
                RemspecStatus::RemspecOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Override one field by dotted path with a JSON value (bare words count as
/// strings), then revalidate.
///
/// # Safety
/// `cfg` must be a live config handle; `path` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn remspec_config_set(
    cfg: *mut RemspecConfig,
    path: *const c_char,
    value: *const c_char,
) -> RemspecStatus {
    require!(cfg);
    require!(path);
    require!(value);
    guarded(|| {
        let (path, value) = match (utf8_arg(path), utf8_arg(value)) {
            (Ok(p), Ok(v)) => (p, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let overrides = [(path.to_string(), value.to_string())];
        match (*cfg).inner.with_overrides(&overrides) {
            Ok(updated) => {
                (*cfg).inner = updated;
                RemspecStatus::RemspecOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Serialize a config to pretty JSON (NUL-terminated).
///
/// Pass a null `buf` to query the required size (including the NUL) through
/// `needed`.
///
/// # Safety
/// `cfg` must be a live config handle; `needed` must be valid; `buf`, when
/// non-null, must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn remspec_config_to_json(
    cfg: *const RemspecConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RemspecStatus {
    require!(cfg);
    require!(needed);
    guarded(|| {
        let json = (*cfg).inner.to_json_string();
        let want = json.len() + 1;
        *needed = want;
        if buf.is_null() {
            return RemspecStatus::RemspecOk;
        }
        if len < want {
            set_error("buffer too small for config JSON");
            return RemspecStatus::RemspecErrBufferTooSmall;
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buf as *mut u8, json.len());
        *buf.add(json.len()) = 0;
        RemspecStatus::RemspecOk
    })
}

/// Release a config handle. Null is a no-op.
///
/// # Safety
/// `cfg` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn remspec_config_free(cfg: *mut RemspecConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulate one dwell at `lambda_m_nm` (NaN selects the setting with the
/// highest expected coincidence rate) and return the two detector streams.
///
/// # Safety
/// `cfg` must be a live config handle; `out1` and `out2` must be valid; on
/// success each receives a stream handle for [`remspec_stream_free`].
#[no_mangle]
pub unsafe extern "C" fn remspec_simulate(
    cfg: *const RemspecConfig,
    lambda_m_nm: f64,
    out1: *mut *mut RemspecStream,
    out2: *mut *mut RemspecStream,
) -> RemspecStatus {
    require!(cfg);
    require!(out1);
    require!(out2);
    guarded(|| {
        let run = || -> Result<(EventStream, EventStream), Error> {
            let materialized = scan::materialize(&(*cfg).inner)?;
            let lambda = if lambda_m_nm.is_nan() {
                scan::peak_rate_setting(&materialized)?
            } else {
                lambda_m_nm
            };
            scan::simulate_setting(&materialized, lambda)
        };
        match run() {
            Ok((s1, s2)) => {
                *out1 = Box::into_raw(Box::new(RemspecStream { inner: s1 }));
                *out2 = Box::into_raw(Box::new(RemspecStream { inner: s2 }));
                RemspecStatus::RemspecOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Read a `.ttag` file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` receives a stream handle on success.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_read(
    path: *const c_char,
    out: *mut *mut RemspecStream,
) -> RemspecStatus {
    require!(path);
    require!(out);
    guarded(|| {
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match read_ttag(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(RemspecStream { inner }));
                RemspecStatus::RemspecOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Write a stream as a `.ttag` file.
///
/// # Safety
/// `stream` must be a live stream handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_write(
    stream: *const RemspecStream,
    path: *const c_char,
) -> RemspecStatus {
    require!(stream);
    require!(path);
    guarded(|| {
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_ttag(&(*stream).inner, path) {
            Ok(()) => RemspecStatus::RemspecOk,
            Err(e) => fail(e),
        }
    })
}

/// Number of events in a stream; 0 for null.
///
/// # Safety
/// `stream` must be null or a live stream handle.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_len(stream: *const RemspecStream) -> usize {
    if stream.is_null() {
        0
    } else {
        (*stream).inner.len()
    }
}

/// Detector code of a stream (1 or 2); 0 for null.
///
/// # Safety
/// `stream` must be null or a live stream handle.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_detector(stream: *const RemspecStream) -> u8 {
    if stream.is_null() {
        0
    } else {
        (*stream).inner.detector().code()
    }
}

/// Copy event times (ps on the stream's clock) into `buf`. Pass a null
/// `buf` to query the event count through `needed`.
///
/// # Safety
/// `stream` must be a live stream handle; `needed` valid; `buf`, when
/// non-null, must hold `len` u64 slots.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_times_ps(
    stream: *const RemspecStream,
    buf: *mut u64,
    len: usize,
    needed: *mut usize,
) -> RemspecStatus {
    require!(stream);
    require!(needed);
    guarded(|| {
        let want = (*stream).inner.len();
        *needed = want;
        if buf.is_null() {
            return RemspecStatus::RemspecOk;
        }
        if len < want {
            set_error("buffer too small for event times");
            return RemspecStatus::RemspecErrBufferTooSmall;
        }
        for (i, t) in (*stream).inner.times_ps().enumerate() {
            *buf.add(i) = t;
        }
        RemspecStatus::RemspecOk
    })
}

/// Release a stream handle. Null is a no-op.
///
/// # Safety
/// `stream` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn remspec_stream_free(stream: *mut RemspecStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Find the offset of stream 2 relative to stream 1. All durations are in
/// seconds; `window_s` is the full coincidence window. A below-threshold
/// peak fills `out` and returns `REMSPEC_ERR_NO_ALIGNMENT`.
///
/// # Safety
/// `s1`, `s2` must be live stream handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn remspec_align(
    s1: *const RemspecStream,
    s2: *const RemspecStream,
    window_s: f64,
    search_s: f64,
    coarse_s: f64,
    threshold: f64,
    out: *mut RemspecAlignment,
) -> RemspecStatus {
    require!(s1);
    require!(s2);
    require!(out);
    guarded(|| {
        let window = match CoincidenceWindow::new(window_s) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        let params = AlignmentParams {
            search_range: search_s,
            coarse_bin: coarse_s,
            window,
            significance_threshold: threshold,
            ..AlignmentParams::default()
        };
        match align(&(*s1).inner, &(*s2).inner, &params) {
            Ok(res) => {
                *out = RemspecAlignment {
                    offset_ps: res.best_offset_ps,
                    peak_count: res.peak_count,
                    background_mean: res.background_mean,
                    significance: res.significance,
                    refined_count: res.refined_count,
                    aligned: res.aligned as u8,
                };
                if res.aligned {
                    RemspecStatus::RemspecOk
                } else {
                    fail(Error::NoAlignment {
                        significance: res.significance,
                        threshold,
                    })
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// Matched-pair coincidences between two streams at a fixed offset.
///
/// # Safety
/// `s1`, `s2` must be live stream handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn remspec_count_coincidences(
    s1: *const RemspecStream,
    s2: *const RemspecStream,
    offset_s: f64,
    window_s: f64,
    out: *mut u64,
) -> RemspecStatus {
    require!(s1);
    require!(s2);
    require!(out);
    guarded(|| {
        let result = CoincidenceWindow::new(window_s)
            .and_then(|w| count_coincidences(&(*s1).inner, &(*s2).inner, offset_s, &w));
        match result {
            Ok(n) => {
                *out = n;
                RemspecStatus::RemspecOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Run the Monte Carlo scan described by the config.
///
/// # Safety
/// `cfg` must be a live config handle; `out` receives a curve handle for
/// [`remspec_curve_free`].
#[no_mangle]
pub unsafe extern "C" fn remspec_scan_run(
    cfg: *const RemspecConfig,
    out: *mut *mut RemspecCurve,
) -> RemspecStatus {
    require!(cfg);
    require!(out);
    guarded(|| match scan::run_scan(&(*cfg).inner) {
        Ok(run) => {
            *out = Box::into_raw(Box::new(RemspecCurve { inner: run.curve }));
            RemspecStatus::RemspecOk
        }
        Err(e) => fail(e),
    })
}

/// Evaluate the analytic expectation of the scan described by the config.
///
/// # Safety
/// As [`remspec_scan_run`].
#[no_mangle]
pub unsafe extern "C" fn remspec_scan_analytic(
    cfg: *const RemspecConfig,
    out: *mut *mut RemspecCurve,
) -> RemspecStatus {
    require!(cfg);
    require!(out);
    guarded(|| match scan::analytic_scan(&(*cfg).inner) {
        Ok(curve) => {
            *out = Box::into_raw(Box::new(RemspecCurve { inner: curve }));
            RemspecStatus::RemspecOk
        }
        Err(e) => fail(e),
    })
}

/// Number of points in a curve; 0 for null.
///
/// # Safety
/// `curve` must be null or a live curve handle.
#[no_mangle]
pub unsafe extern "C" fn remspec_curve_len(curve: *const RemspecCurve) -> usize {
    if curve.is_null() {
        0
    } else {
        (*curve).inner.points().len()
    }
}

/// Copy out one scan record.
///
/// # Safety
/// `curve` must be a live curve handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn remspec_curve_point(
    curve: *const RemspecCurve,
    index: usize,
    out: *mut RemspecScanPoint,
) -> RemspecStatus {
    require!(curve);
    require!(out);
    guarded(|| {
        let points = (*curve).inner.points();
        let Some(p) = points.get(index) else {
            set_error("curve index out of range");
            return RemspecStatus::RemspecErrDomain;
        };
        *out = RemspecScanPoint {
            lambda_m_nm: p.lambda_m_nm,
            lambda_conj_nm: p.lambda_conj_nm,
            singles1: p.singles1,
            singles2: p.singles2,
            coincidences: p.coincidences,
            dwell_s: p.dwell_s,
            normalized: p.normalized.unwrap_or(f64::NAN),
        };
        RemspecStatus::RemspecOk
    })
}

/// Peak position and FWHM of the reconstructed spectrum; `fwhm_nm` is NaN
/// when a half-maximum crossing is missing.
///
/// # Safety
/// `curve` must be a live curve handle; `peak_nm` and `fwhm_nm` valid.
#[no_mangle]
pub unsafe extern "C" fn remspec_curve_peak(
    curve: *const RemspecCurve,
    peak_nm: *mut f64,
    fwhm_nm: *mut f64,
) -> RemspecStatus {
    require!(curve);
    require!(peak_nm);
    require!(fwhm_nm);
    guarded(|| match scan::reconstruct(&(*curve).inner) {
        Ok(recon) => {
            *peak_nm = recon.peak_lambda_nm();
            *fwhm_nm = recon.fwhm_nm().unwrap_or(f64::NAN);
            RemspecStatus::RemspecOk
        }
        Err(e) => fail(e),
    })
}

/// Copy the reconstruction (conjugate wavelength, peak-normalized value)
/// into two parallel arrays. Pass null buffers to query the length.
///
/// # Safety
/// `curve` must be a live curve handle; `needed` valid; the buffers, when
/// non-null, must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn remspec_curve_reconstruction(
    curve: *const RemspecCurve,
    lambda_nm: *mut f64,
    value: *mut f64,
    len: usize,
    needed: *mut usize,
) -> RemspecStatus {
    require!(curve);
    require!(needed);
    guarded(|| match scan::reconstruct(&(*curve).inner) {
        Ok(recon) => {
            let want = recon.lambdas_nm().len();
            *needed = want;
            if lambda_nm.is_null() && value.is_null() {
                return RemspecStatus::RemspecOk;
            }
            if lambda_nm.is_null() || value.is_null() {
                set_error("both output arrays must be provided together");
                return RemspecStatus::RemspecErrNullArgument;
            }
            if len < want {
                set_error("buffer too small for reconstruction");
                return RemspecStatus::RemspecErrBufferTooSmall;
            }
            ptr::copy_nonoverlapping(recon.lambdas_nm().as_ptr(), lambda_nm, want);
            ptr::copy_nonoverlapping(recon.values().as_ptr(), value, want);
            RemspecStatus::RemspecOk
        }
        Err(e) => fail(e),
    })
}

/// Release a curve handle. Null is a no-op.
///
/// # Safety
/// `curve` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn remspec_curve_free(curve: *mut RemspecCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

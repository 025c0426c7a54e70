/* C interface to the remspec photon-pair spectroscopy simulator. */

#ifndef REMSPEC_H
#define REMSPEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Values above `REMSPEC_ERR_IO` refine the
// CLI's exit-code scheme with binding-level failures.
typedef enum RemspecStatus {
  REMSPEC_OK = 0,
  // Invalid configuration (bad field value, unknown key, bad override path).
  REMSPEC_ERR_CONFIG = 2,
  // Correlation peak below the significance threshold.
  REMSPEC_ERR_NO_ALIGNMENT = 3,
  // File system or wire-format failure.
  REMSPEC_ERR_IO = 4,
  // Domain error outside configuration handling.
  REMSPEC_ERR_DOMAIN = 5,
  // A required pointer argument was null.
  REMSPEC_ERR_NULL_ARGUMENT = 6,
  // A string argument was not valid UTF-8.
  REMSPEC_ERR_UTF8 = 7,
  // The provided buffer is too small; retry with the reported length.
  REMSPEC_ERR_BUFFER_TOO_SMALL = 8,
  // An internal panic was caught at the boundary.
  REMSPEC_ERR_PANIC = 9,
} RemspecStatus;

// Opaque run configuration.
typedef struct RemspecConfig RemspecConfig;

// Opaque scan curve (one record per monochromator setting).
typedef struct RemspecCurve RemspecCurve;

// Opaque time-tag stream.
typedef struct RemspecStream RemspecStream;

// Outcome of an offset search.
typedef struct RemspecAlignment {
  // Recovered offset of stream 2 relative to stream 1, ps.
  int64_t offset_ps;
  // Coarse-histogram count at the peak.
  uint64_t peak_count;
  // Mean coarse count away from the peak.
  double background_mean;
  // `(peak - background) / sqrt(max(background, 1))`.
  double significance;
  // Matched-pair count at the refined offset.
  uint64_t refined_count;
  // 1 if the peak cleared the threshold, else 0.
  uint8_t aligned;
} RemspecAlignment;

// One scan record. `normalized` is NaN when the point had no idler counts.
typedef struct RemspecScanPoint {
  double lambda_m_nm;
  double lambda_conj_nm;
  double singles1;
  double singles2;
  double coincidences;
  double dwell_s;
  double normalized;
} RemspecScanPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread; empty string
// when nothing failed yet. The pointer stays valid until the next failing
// call on the same thread.
const char *remspec_last_error(void);

// Library version as a static NUL-terminated string.
const char *remspec_version(void);

// Create a config with the built-in reference profile.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle that must
// be released with [`remspec_config_free`].
enum RemspecStatus remspec_config_default(struct RemspecConfig **out);

// Parse a config from JSON; missing fields fall back to the reference
// profile and the result is validated.
//
// # Safety
// `json` must be a NUL-terminated string; `out` as in
// [`remspec_config_default`].
enum RemspecStatus remspec_config_from_json(const char *json, struct RemspecConfig **out);

// Override one field by dotted path with a JSON value (bare words count as
// strings), then revalidate.
//
// # Safety
// `cfg` must be a live config handle; `path` and `value` NUL-terminated.
enum RemspecStatus remspec_config_set(struct RemspecConfig *cfg,
                                      const char *path,
                                      const char *value);

// Serialize a config to pretty JSON (NUL-terminated).
//
// Pass a null `buf` to query the required size (including the NUL) through
// `needed`.
//
// # Safety
// `cfg` must be a live config handle; `needed` must be valid; `buf`, when
// non-null, must point to `len` writable bytes.
enum RemspecStatus remspec_config_to_json(const struct RemspecConfig *cfg,
                                          char *buf,
                                          size_t len,
                                          size_t *needed);

// Release a config handle. Null is a no-op.
//
// # Safety
// `cfg` must be null or a handle not freed before.
void remspec_config_free(struct RemspecConfig *cfg);

// Simulate one dwell at `lambda_m_nm` (NaN selects the setting with the
// highest expected coincidence rate) and return the two detector streams.
//
// # Safety
// `cfg` must be a live config handle; `out1` and `out2` must be valid; on
// success each receives a stream handle for [`remspec_stream_free`].
enum RemspecStatus remspec_simulate(const struct RemspecConfig *cfg,
                                    double lambda_m_nm,
                                    struct RemspecStream **out1,
                                    struct RemspecStream **out2);

// Read a `.ttag` file.
//
// # Safety
// `path` must be NUL-terminated; `out` receives a stream handle on success.
enum RemspecStatus remspec_stream_read(const char *path, struct RemspecStream **out);

// Write a stream as a `.ttag` file.
//
// # Safety
// `stream` must be a live stream handle; `path` NUL-terminated.
enum RemspecStatus remspec_stream_write(const struct RemspecStream *stream, const char *path);

// Number of events in a stream; 0 for null.
//
// # Safety
// `stream` must be null or a live stream handle.
size_t remspec_stream_len(const struct RemspecStream *stream);

// Detector code of a stream (1 or 2); 0 for null.
//
// # Safety
// `stream` must be null or a live stream handle.
uint8_t remspec_stream_detector(const struct RemspecStream *stream);

// Copy event times (ps on the stream's clock) into `buf`. Pass a null
// `buf` to query the event count through `needed`.
//
// # Safety
// `stream` must be a live stream handle; `needed` valid; `buf`, when
// non-null, must hold `len` u64 slots.
enum RemspecStatus remspec_stream_times_ps(const struct RemspecStream *stream,
                                           uint64_t *buf,
                                           size_t len,
                                           size_t *needed);

// Release a stream handle. Null is a no-op.
//
// # Safety
// `stream` must be null or a handle not freed before.
void remspec_stream_free(struct RemspecStream *stream);

// Find the offset of stream 2 relative to stream 1. All durations are in
// seconds; `window_s` is the full coincidence window. A below-threshold
// peak fills `out` and returns `REMSPEC_ERR_NO_ALIGNMENT`.
//
// # Safety
// `s1`, `s2` must be live stream handles; `out` must be valid.
enum RemspecStatus remspec_align(const struct RemspecStream *s1,
                                 const struct RemspecStream *s2,
                                 double window_s,
                                 double search_s,
                                 double coarse_s,
                                 double threshold,
                                 struct RemspecAlignment *out);

// Matched-pair coincidences between two streams at a fixed offset.
//
// # Safety
// `s1`, `s2` must be live stream handles; `out` must be valid.
enum RemspecStatus remspec_count_coincidences(const struct RemspecStream *s1,
                                              const struct RemspecStream *s2,
                                              double offset_s,
                                              double window_s,
                                              uint64_t *out);

// Run the Monte Carlo scan described by the config.
//
// # Safety
// `cfg` must be a live config handle; `out` receives a curve handle for
// [`remspec_curve_free`].
enum RemspecStatus remspec_scan_run(const struct RemspecConfig *cfg, struct RemspecCurve **out);

// Evaluate the analytic expectation of the scan described by the config.
//
// # Safety
// As [`remspec_scan_run`].
enum RemspecStatus remspec_scan_analytic(const struct RemspecConfig *cfg,
                                         struct RemspecCurve **out);

// Number of points in a curve; 0 for null.
//
// # Safety
// `curve` must be null or a live curve handle.
size_t remspec_curve_len(const struct RemspecCurve *curve);

// Copy out one scan record.
//
// # Safety
// `curve` must be a live curve handle; `out` must be valid.
enum RemspecStatus remspec_curve_point(const struct RemspecCurve *curve,
                                       size_t index,
                                       struct RemspecScanPoint *out);

// Peak position and FWHM of the reconstructed spectrum; `fwhm_nm` is NaN
// when a half-maximum crossing is missing.
//
// # Safety
// `curve` must be a live curve handle; `peak_nm` and `fwhm_nm` valid.
enum RemspecStatus remspec_curve_peak(const struct RemspecCurve *curve,
                                      double *peak_nm,
                                      double *fwhm_nm);

// Copy the reconstruction (conjugate wavelength, peak-normalized value)
// into two parallel arrays. Pass null buffers to query the length.
//
// # Safety
// `curve` must be a live curve handle; `needed` valid; the buffers, when
// non-null, must each hold `len` doubles.
enum RemspecStatus remspec_curve_reconstruction(const struct RemspecCurve *curve,
                                                double *lambda_nm,
                                                double *value,
                                                size_t len,
                                                size_t *needed);

// Release a curve handle. Null is a no-op.
//
// # Safety
// `curve` must be null or a handle not freed before.
void remspec_curve_free(struct RemspecCurve *curve);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* REMSPEC_H */

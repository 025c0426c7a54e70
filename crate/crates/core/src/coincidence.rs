//! Windowed coincidence counting and time-base alignment.
//!
//! Both detectors free-run on their own clocks, so the first processing step
//! is to find the inter-stream offset that maximizes coincidences. The
//! search is two-stage: a coarse difference histogram built by an exact
//! sorted-merge sweep over all event pairs within the search range, then a
//! fine sweep of the matched-pair count on a grid of a quarter window around
//! the winning bin. All timing arithmetic is integer picoseconds.
//!
//! When the pair-sweep workload would be excessive (high rates over a wide
//! search range), a pre-localization pass cross-correlates coarsely binned
//! copies of the streams first and the exact histogram is then built only in
//! a neighborhood of the correlation peak; the reported histogram covers
//! that neighborhood rather than the full range. Both routes produce
//! identical histograms wherever their supports overlap.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::timetag::EventStream;

/// Workload cap for the exact pair sweep before pre-localization kicks in.
pub const PAIR_VISIT_BUDGET: f64 = 2.0e8;

/// Cap on the binned-correlation array length in the pre-localization pass.
const CORRELATION_BINS: usize = 1 << 20;

/// Full coincidence window: clicks `(t1, t2)` coincide at offset `o` when
/// `|t2 - t1 - o| <= width / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoincidenceWindow {
    width: f64,
}

impl CoincidenceWindow {
    pub fn new(width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::domain("window width must be positive and finite"));
        }
        Ok(CoincidenceWindow { width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn width_ps(&self) -> i64 {
        (self.width * 1e12).round() as i64
    }
}

fn times_ps_i64(s: &EventStream) -> Vec<i64> {
    s.times_ps().map(|t| t as i64).collect()
}

fn offset_to_ps(offset: f64) -> Result<i64> {
    let ps = offset * 1e12;
    if !ps.is_finite() || ps.abs() > 1e17 {
        return Err(Error::domain(format!("offset {offset} s out of range")));
    }
    Ok(ps.round() as i64)
}

/// Greedy earliest-first one-to-one matching; each event is used at most
/// once. For interval matching this greedy is maximum-cardinality.
fn count_matched(t1: &[i64], t2: &[i64], offset_ps: i64, width_ps: i64) -> u64 {
    let (mut i, mut j, mut count) = (0usize, 0usize, 0u64);
    while i < t1.len() && j < t2.len() {
        let e = t2[j] - offset_ps - t1[i];
        if 2 * e.abs() <= width_ps {
            count += 1;
            i += 1;
            j += 1;
        } else if e < 0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    count
}

/// Matched-pair count between two streams after shifting `s2` back by
/// `offset` seconds.
pub fn count_coincidences(
    s1: &EventStream,
    s2: &EventStream,
    offset: f64,
    window: &CoincidenceWindow,
) -> Result<u64> {
    let offset_ps = offset_to_ps(offset)?;
    Ok(count_matched(
        &times_ps_i64(s1),
        &times_ps_i64(s2),
        offset_ps,
        window.width_ps(),
    ))
}

/// Histogram of inter-stream differences `t2 - t1`. Bin `k` is centered at
/// `k * bin_ps` and covers `[k*bin_ps - bin_ps/2, k*bin_ps + bin_ps/2)`.
/// Storage spans the intersection of the requested range with the streams'
/// actual difference support.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceHistogram {
    bin_ps: i64,
    k_lo: i64,
    counts: Vec<u32>,
}

impl DifferenceHistogram {
    fn empty(bin_ps: i64) -> Self {
        DifferenceHistogram {
            bin_ps,
            k_lo: 0,
            counts: Vec::new(),
        }
    }

    /// Index of the bin containing difference `d`.
    pub fn bin_index(d: i64, bin_ps: i64) -> i64 {
        (2 * d + bin_ps).div_euclid(2 * bin_ps)
    }

    pub fn bin_ps(&self) -> i64 {
        self.bin_ps
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Center (ps) of the bin stored at `idx`.
    pub fn offset_ps(&self, idx: usize) -> i64 {
        (self.k_lo + idx as i64) * self.bin_ps
    }

    pub fn count_at_offset(&self, d: i64) -> u32 {
        let k = Self::bin_index(d, self.bin_ps);
        let idx = k - self.k_lo;
        if idx < 0 || idx as usize >= self.counts.len() {
            0
        } else {
            self.counts[idx as usize]
        }
    }

    /// Highest bin; ties resolve to the smallest |center|, then the smaller
    /// signed center.
    pub fn peak(&self) -> Option<(usize, u32)> {
        let mut best: Option<(usize, u32)> = None;
        for (idx, &c) in self.counts.iter().enumerate() {
            let better = match best {
                None => true,
                Some((bidx, bc)) => {
                    let d = self.offset_ps(idx).abs();
                    let bd = self.offset_ps(bidx).abs();
                    c > bc || (c == bc && (d < bd || (d == bd && self.offset_ps(idx) < self.offset_ps(bidx))))
                }
            };
            if better {
                best = Some((idx, c));
            }
        }
        best
    }

    /// Mean count over bins at least `exclude` bins away from `peak_idx`.
    pub fn background_mean(&self, peak_idx: usize, exclude: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0u64;
        for (idx, &c) in self.counts.iter().enumerate() {
            if idx.abs_diff(peak_idx) > exclude {
                sum += c as f64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Two-column CSV (`shift_ps,count`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ctx = "writing alignment csv";
        writeln!(w, "shift_ps,count").map_err(|e| Error::io(ctx, e))?;
        for (idx, &c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.offset_ps(idx), c).map_err(|e| Error::io(ctx, e))?;
        }
        Ok(())
    }
}

/// Exact sweep: every pair with difference in `[d_lo, d_hi]` is binned.
fn exact_histogram(t1: &[i64], t2: &[i64], d_lo: i64, d_hi: i64, bin_ps: i64) -> DifferenceHistogram {
    let (Some(&a_first), Some(&a_last)) = (t1.first(), t1.last()) else {
        return DifferenceHistogram::empty(bin_ps);
    };
    let (Some(&b_first), Some(&b_last)) = (t2.first(), t2.last()) else {
        return DifferenceHistogram::empty(bin_ps);
    };
    let lo = d_lo.max(b_first - a_last);
    let hi = d_hi.min(b_last - a_first);
    if lo > hi {
        return DifferenceHistogram::empty(bin_ps);
    }
    let k_lo = DifferenceHistogram::bin_index(lo, bin_ps);
    let k_hi = DifferenceHistogram::bin_index(hi, bin_ps);
    let mut counts = vec![0u32; (k_hi - k_lo + 1) as usize];

    let mut start = 0usize;
    for &a in t1 {
        let t_lo = a + d_lo;
        let t_hi = a + d_hi;
        while start < t2.len() && t2[start] < t_lo {
            start += 1;
        }
        for &b in &t2[start..] {
            if b > t_hi {
                break;
            }
            let k = DifferenceHistogram::bin_index(b - a, bin_ps);
            let slot = &mut counts[(k - k_lo) as usize];
            *slot = slot.saturating_add(1);
        }
    }
    DifferenceHistogram {
        bin_ps,
        k_lo,
        counts,
    }
}

/// Full difference histogram of `t2 - t1` over `±search_range`.
pub fn difference_histogram(
    s1: &EventStream,
    s2: &EventStream,
    search_range: f64,
    bin: f64,
) -> Result<DifferenceHistogram> {
    if !(search_range > 0.0) || !search_range.is_finite() {
        return Err(Error::domain("search range must be positive and finite"));
    }
    if !(bin > 0.0) || !bin.is_finite() {
        return Err(Error::domain("histogram bin must be positive and finite"));
    }
    let s_ps = offset_to_ps(search_range)?;
    let bin_ps = (bin * 1e12).round().max(1.0) as i64;
    Ok(exact_histogram(
        &times_ps_i64(s1),
        &times_ps_i64(s2),
        -s_ps,
        s_ps,
        bin_ps,
    ))
}

/// Cross-correlate coarsely binned copies of the streams and return the best
/// lag (ps) within `±search_ps`. Used only to pre-localize oversized sweeps.
fn correlation_peak_ps(t1: &[i64], t2: &[i64], search_ps: i64, coarse_bin_ps: i64) -> i64 {
    let lo = (*t1.first().unwrap()).min(*t2.first().unwrap());
    let hi = (*t1.last().unwrap()).max(*t2.last().unwrap());
    let span = (hi - lo).max(1);
    let mut bin = coarse_bin_ps;
    while span / bin + 1 > CORRELATION_BINS as i64 {
        bin *= 2;
    }
    let len = (span / bin + 1) as usize;
    let fft_len = (2 * len).next_power_of_two();

    let mut a = vec![Complex64::default(); fft_len];
    let mut b = vec![Complex64::default(); fft_len];
    for &t in t1 {
        a[((t - lo) / bin) as usize].re += 1.0;
    }
    for &t in t2 {
        b[((t - lo) / bin) as usize].re += 1.0;
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_len);
    fft.process(&mut a);
    fft.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = x.conj() * y;
    }
    planner.plan_fft_inverse(fft_len).process(&mut a);

    // Lag m of the linear correlation sits at index m (m >= 0) or
    // fft_len + m (m < 0) of the circular result.
    let max_lag = ((search_ps / bin) + 1).min(len as i64 - 1);
    let mut best_lag = 0i64;
    let mut best_val = f64::NEG_INFINITY;
    for m in -max_lag..=max_lag {
        let idx = if m >= 0 { m as usize } else { (fft_len as i64 + m) as usize };
        let v = a[idx].re;
        if v > best_val + 1e-6 || (v > best_val - 1e-6 && m.abs() < best_lag.abs()) {
            best_val = v;
            best_lag = m;
        }
    }
    best_lag * bin
}

/// Search parameters for [`align`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentParams {
    /// Half-range of offsets examined, s.
    pub search_range: f64,
    /// Stage-1 histogram bin, s; must be at least the window width.
    pub coarse_bin: f64,
    pub window: CoincidenceWindow,
    /// Peak significance required to declare alignment.
    pub significance_threshold: f64,
    /// Pair-sweep workload above which pre-localization engages.
    pub max_pair_visits: f64,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        AlignmentParams {
            search_range: 1.0,
            coarse_bin: 100.0e-9,
            window: CoincidenceWindow::new(5.0e-9).expect("static width"),
            significance_threshold: 5.0,
            max_pair_visits: PAIR_VISIT_BUDGET,
        }
    }
}

impl AlignmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.search_range > 0.0) || !self.search_range.is_finite() {
            return Err(Error::domain("search range must be positive and finite"));
        }
        if !(self.coarse_bin >= self.window.width()) {
            return Err(Error::domain(format!(
                "coarse bin {} s must be at least the window width {} s",
                self.coarse_bin,
                self.window.width()
            )));
        }
        if !(self.significance_threshold > 0.0) {
            return Err(Error::domain("significance threshold must be positive"));
        }
        if !(self.max_pair_visits >= 1.0e6) {
            return Err(Error::domain("pair-visit budget must be at least 1e6"));
        }
        Ok(())
    }
}

/// Outcome of the two-stage offset search.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// Refined offset, integer ps; see [`AlignmentResult::best_offset`].
    pub best_offset_ps: i64,
    /// Coarse-histogram count of the bin containing `best_offset_ps`.
    pub peak_count: u64,
    /// Mean coarse count outside the peak neighborhood (peak bin ± 2).
    pub background_mean: f64,
    /// `(peak - background) / sqrt(max(background, 1))`.
    pub significance: f64,
    /// Whether the peak cleared the significance threshold.
    pub aligned: bool,
    /// Matched-pair count at `best_offset_ps` from the fine stage.
    pub refined_count: u64,
    pub histogram: DifferenceHistogram,
}

impl AlignmentResult {
    /// Best offset in seconds.
    pub fn best_offset(&self) -> f64 {
        self.best_offset_ps as f64 * 1e-12
    }

    fn unaligned(bin_ps: i64) -> Self {
        AlignmentResult {
            best_offset_ps: 0,
            peak_count: 0,
            background_mean: 0.0,
            significance: 0.0,
            aligned: false,
            refined_count: 0,
            histogram: DifferenceHistogram::empty(bin_ps),
        }
    }
}

/// Find the offset of `s2` relative to `s1` that maximizes coincidences.
///
/// Stage 1 histograms all pair differences within `±search_range` at
/// `coarse_bin`; stage 2 refines the winning bin by maximizing the matched
/// count over a window/4 grid, breaking ties toward the smallest |offset|
/// and then the smaller signed offset. A result that fails the significance
/// test is returned with `aligned = false` rather than as an error.
pub fn align(s1: &EventStream, s2: &EventStream, params: &AlignmentParams) -> Result<AlignmentResult> {
    params.validate()?;
    let bin_ps = (params.coarse_bin * 1e12).round().max(1.0) as i64;
    let t1 = times_ps_i64(s1);
    let t2 = times_ps_i64(s2);
    if t1.is_empty() || t2.is_empty() {
        return Ok(AlignmentResult::unaligned(bin_ps));
    }
    let search_ps = offset_to_ps(params.search_range)?;

    // Workload estimate for the exact sweep: every s1 event visits the s2
    // events inside its ±search window.
    let span2 = (*t2.last().unwrap() - *t2.first().unwrap()).max(1) as f64;
    let visits = t1.len() as f64 * t2.len() as f64 * ((2 * search_ps) as f64 / span2).min(1.0);

    let histogram = if visits <= params.max_pair_visits {
        exact_histogram(&t1, &t2, -search_ps, search_ps, bin_ps)
    } else {
        let center = correlation_peak_ps(&t1, &t2, search_ps, bin_ps);
        let coarse = {
            let lo = (*t1.first().unwrap()).min(*t2.first().unwrap());
            let hi = (*t1.last().unwrap()).max(*t2.last().unwrap());
            let span = (hi - lo).max(1);
            let mut b = bin_ps;
            while span / b + 1 > CORRELATION_BINS as i64 {
                b *= 2;
            }
            b
        };
        let radius = (2 * coarse).max(200 * bin_ps);
        let d_lo = (center - radius).max(-search_ps);
        let d_hi = (center + radius).min(search_ps);
        exact_histogram(&t1, &t2, d_lo, d_hi, bin_ps)
    };

    let Some((peak_idx, peak_count)) = histogram.peak() else {
        return Ok(AlignmentResult::unaligned(bin_ps));
    };
    let background_mean = histogram.background_mean(peak_idx, 2);
    let significance = (peak_count as f64 - background_mean) / background_mean.max(1.0).sqrt();
    let aligned = significance >= params.significance_threshold;
    let coarse_center = histogram.offset_ps(peak_idx);

    if !aligned {
        return Ok(AlignmentResult {
            best_offset_ps: coarse_center,
            peak_count: peak_count as u64,
            background_mean,
            significance,
            aligned: false,
            refined_count: 0,
            histogram,
        });
    }

    // Stage 2: fine sweep of the matched count around the winning bin.
    let step = (params.window.width_ps() / 4).max(1);
    let width_ps = params.window.width_ps();
    let mut best_offset = coarse_center;
    let mut best_count = 0u64;
    let mut d = coarse_center - bin_ps;
    while d <= coarse_center + bin_ps {
        let c = count_matched(&t1, &t2, d, width_ps);
        let better = c > best_count
            || (c == best_count
                && (d.abs() < best_offset.abs()
                    || (d.abs() == best_offset.abs() && d < best_offset)));
        if better {
            best_count = c;
            best_offset = d;
        }
        d += step;
    }

    Ok(AlignmentResult {
        best_offset_ps: best_offset,
        peak_count: histogram.count_at_offset(best_offset) as u64,
        background_mean,
        significance,
        aligned: true,
        refined_count: best_count,
        histogram,
    })
}

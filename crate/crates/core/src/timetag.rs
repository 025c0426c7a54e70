//! Event-timer streams, clock transforms, and the `.ttag` wire format.
//!
//! A stream is a strictly increasing sequence of quantized timestamps from
//! one detector. On disk the format is little-endian and fixed-width so that
//! multi-million-event files can be scanned without parsing state:
//!
//! | bytes | field         |
//! |-------|---------------|
//! | 0..4  | magic `0x54544147` |
//! | 4..6  | version (1)   |
//! | 6     | detector id (1 or 2) |
//! | 7     | reserved (0)  |
//! | 8..12 | resolution, ps per tick |
//! | 12..20| duration, ps  |
//! | 20..28| record count  |
//! | 28..  | count x u64 timestamp, in ticks |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const TTAG_MAGIC: u32 = 0x5454_4147;
pub const TTAG_VERSION: u16 = 1;
/// Fixed header length in bytes; records follow immediately.
pub const TTAG_HEADER_LEN: u64 = 28;

/// Largest clock rate error the pipeline models. Keeping drift small
/// guarantees that a strictly increasing stream stays strictly increasing
/// after retiming at any supported resolution.
pub const DRIFT_LIMIT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorId {
    D1,
    D2,
}

impl DetectorId {
    pub fn code(self) -> u8 {
        match self {
            DetectorId::D1 => 1,
            DetectorId::D2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DetectorId::D1),
            2 => Some(DetectorId::D2),
            _ => None,
        }
    }
}

/// Malformed `.ttag` data. Offsets are byte positions from the start of the
/// stream; record indices count timestamps from zero.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic 0x{found:08x} at byte offset 0 (expected 0x{TTAG_MAGIC:08x})")]
    BadMagic { found: u32 },

    #[error("unsupported version {found} at byte offset 4 (this reader handles {TTAG_VERSION})")]
    UnsupportedVersion { found: u16 },

    #[error("bad detector id {found} at byte offset 6 (expected 1 or 2)")]
    BadDetectorId { found: u8 },

    #[error("zero resolution at byte offset 8")]
    ZeroResolution,

    #[error("truncated {context} at byte offset {byte_offset}")]
    Truncated {
        context: &'static str,
        byte_offset: u64,
    },

    #[error(
        "timestamps not strictly increasing at record {record_index} (byte offset {byte_offset})"
    )]
    NonMonotonic {
        record_index: u64,
        byte_offset: u64,
    },
}

/// Strictly increasing quantized timestamps from one detector, under one
/// clock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    detector: DetectorId,
    resolution_ps: u32,
    duration_ps: u64,
    ticks: Vec<u64>,
}

impl EventStream {
    pub fn new(
        detector: DetectorId,
        resolution_ps: u32,
        duration_ps: u64,
        ticks: Vec<u64>,
    ) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(Error::domain("resolution must be at least 1 ps"));
        }
        if !ticks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain("timestamps must be strictly increasing"));
        }
        let duration_ps = match ticks.last() {
            Some(&last) => duration_ps.max(last.saturating_mul(resolution_ps as u64) + 1),
            None => duration_ps,
        };
        Ok(EventStream {
            detector,
            resolution_ps,
            duration_ps,
            ticks,
        })
    }

    /// Quantize sorted arrival times (seconds) onto the tick grid. Collisions
    /// that round onto an occupied tick are bumped forward one tick, which
    /// preserves both the count and strict monotonicity.
    pub fn from_times_s(
        detector: DetectorId,
        resolution_ps: u32,
        duration_s: f64,
        times_s: &[f64],
    ) -> Result<Self> {
        if resolution_ps == 0 {
            return Err(Error::domain("resolution must be at least 1 ps"));
        }
        let res = resolution_ps as f64 * 1e-12;
        let mut ticks: Vec<u64> = Vec::with_capacity(times_s.len());
        for &t in times_s {
            if !(t >= 0.0) {
                return Err(Error::domain(format!("negative arrival time {t}")));
            }
            let q = (t / res).round() as u64;
            match ticks.last() {
                Some(&prev) if q <= prev => ticks.push(prev + 1),
                _ => ticks.push(q),
            }
        }
        let duration_ps = (duration_s * 1e12).ceil().max(0.0) as u64;
        EventStream::new(detector, resolution_ps, duration_ps, ticks)
    }

    pub fn detector(&self) -> DetectorId {
        self.detector
    }

    pub fn resolution_ps(&self) -> u32 {
        self.resolution_ps
    }

    pub fn resolution_s(&self) -> f64 {
        self.resolution_ps as f64 * 1e-12
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 * 1e-12
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn ticks(&self) -> &[u64] {
        &self.ticks
    }

    /// Timestamp of record `i` in picoseconds.
    pub fn time_ps(&self, i: usize) -> u64 {
        self.ticks[i] * self.resolution_ps as u64
    }

    pub fn times_ps(&self) -> impl Iterator<Item = u64> + '_ {
        let res = self.resolution_ps as u64;
        self.ticks.iter().map(move |&t| t * res)
    }

    pub fn times_s(&self) -> impl Iterator<Item = f64> + '_ {
        let res = self.resolution_s();
        self.ticks.iter().map(move |&t| t as f64 * res)
    }

    /// Copy shifted by a whole number of picoseconds; `delta_ps` must be a
    /// multiple of the resolution. Events shifted below zero are dropped.
    pub fn shifted(&self, delta_ps: i64) -> Result<Self> {
        let res = self.resolution_ps as i64;
        if delta_ps % res != 0 {
            return Err(Error::domain(format!(
                "shift {delta_ps} ps is not a multiple of the {res} ps resolution"
            )));
        }
        let dticks = delta_ps / res;
        let ticks: Vec<u64> = self
            .ticks
            .iter()
            .filter_map(|&t| {
                let shifted = t as i64 + dticks;
                (shifted >= 0).then_some(shifted as u64)
            })
            .collect();
        let duration = (self.duration_ps as i64 + delta_ps).max(0) as u64;
        EventStream::new(self.detector, self.resolution_ps, duration, ticks)
    }

    /// One-column CSV export (`timestamp_ps`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let ctx = "writing csv";
        writeln!(w, "timestamp_ps").map_err(|e| Error::io(ctx, e))?;
        for t in self.times_ps() {
            writeln!(w, "{t}").map_err(|e| Error::io(ctx, e))?;
        }
        Ok(())
    }
}

/// Affine event-timer model: `t_local = (1 + drift) * t_ref + offset`,
/// quantized at `resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Offset, s. May be negative; reference events that map before the
    /// local timer started are not recorded.
    pub offset: f64,
    /// Fractional rate error, dimensionless, |drift| < 1e-3.
    pub drift: f64,
    /// Quantization step, s.
    pub resolution: f64,
}

impl ClockModel {
    pub fn new(offset: f64, drift: f64, resolution: f64) -> Result<Self> {
        if !offset.is_finite() {
            return Err(Error::domain("clock offset must be finite"));
        }
        if !(drift.abs() < DRIFT_LIMIT) {
            return Err(Error::domain(format!(
                "clock drift {drift} outside (-{DRIFT_LIMIT}, {DRIFT_LIMIT})"
            )));
        }
        let res_ps = (resolution * 1e12).round();
        if !(res_ps >= 1.0) || res_ps > u32::MAX as f64 {
            return Err(Error::domain(format!(
                "clock resolution {resolution} s must be a whole picosecond count >= 1 ps"
            )));
        }
        Ok(ClockModel {
            offset,
            drift,
            resolution,
        })
    }

    pub fn ideal() -> Self {
        ClockModel {
            offset: 0.0,
            drift: 0.0,
            resolution: 1e-12,
        }
    }

    pub fn resolution_ps(&self) -> u32 {
        (self.resolution * 1e12).round() as u32
    }

    /// The clock that undoes this one:
    /// `t_ref = (t_local - offset) / (1 + drift)`.
    pub fn inverse(&self) -> ClockModel {
        ClockModel {
            offset: -self.offset / (1.0 + self.drift),
            drift: -self.drift / (1.0 + self.drift),
            resolution: self.resolution,
        }
    }
}

/// Retime a reference-clock stream into a local timer's frame.
pub fn apply_clock(stream: &EventStream, clock: &ClockModel) -> Result<EventStream> {
    let clock = ClockModel::new(clock.offset, clock.drift, clock.resolution)?;
    let res_out_ps = clock.resolution_ps();
    let res_out = res_out_ps as f64;
    let res_in = stream.resolution_ps() as f64;
    let offset_ps = clock.offset * 1e12;
    let gain = 1.0 + clock.drift;

    let mut ticks: Vec<u64> = Vec::with_capacity(stream.len());
    for &tick in stream.ticks() {
        let t_ps = tick as f64 * res_in;
        let local = gain * t_ps + offset_ps;
        let q = (local / res_out).round();
        if q < 0.0 {
            continue;
        }
        let q = q as u64;
        match ticks.last() {
            Some(&prev) if q <= prev => ticks.push(prev + 1),
            _ => ticks.push(q),
        }
    }
    let duration = (gain * stream.duration_ps() as f64 + offset_ps)
        .round()
        .max(0.0) as u64;
    EventStream::new(stream.detector(), res_out_ps, duration, ticks)
}

/// Serialize in the `.ttag` wire format.
pub fn write_stream<W: Write>(stream: &EventStream, mut w: W) -> Result<()> {
    let ctx = "writing ttag stream";
    let io = |e| Error::io(ctx, e);
    w.write_u32::<LittleEndian>(TTAG_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(TTAG_VERSION).map_err(io)?;
    w.write_u8(stream.detector().code()).map_err(io)?;
    w.write_u8(0).map_err(io)?;
    w.write_u32::<LittleEndian>(stream.resolution_ps()).map_err(io)?;
    w.write_u64::<LittleEndian>(stream.duration_ps()).map_err(io)?;
    w.write_u64::<LittleEndian>(stream.len() as u64).map_err(io)?;
    for &tick in stream.ticks() {
        w.write_u64::<LittleEndian>(tick).map_err(io)?;
    }
    Ok(())
}

/// Parse a `.ttag` stream, validating structure and monotonicity.
pub fn read_stream<R: Read>(mut r: R) -> Result<EventStream> {
    let mut header = [0u8; TTAG_HEADER_LEN as usize];
    let got = read_up_to(&mut r, &mut header)
        .map_err(|e| Error::io("reading ttag header", e))?;
    if got < header.len() {
        return Err(FormatError::Truncated {
            context: "header",
            byte_offset: got as u64,
        }
        .into());
    }
    let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != TTAG_MAGIC {
        return Err(FormatError::BadMagic { found: magic }.into());
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != TTAG_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version }.into());
    }
    let detector = DetectorId::from_code(header[6])
        .ok_or(FormatError::BadDetectorId { found: header[6] })?;
    let resolution_ps = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if resolution_ps == 0 {
        return Err(FormatError::ZeroResolution.into());
    }
    let duration_ps = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let count = u64::from_le_bytes(header[20..28].try_into().unwrap());
    if count > usize::MAX as u64 {
        return Err(Error::Capacity {
            expected: count as f64,
            limit: usize::MAX as u64,
        });
    }

    let mut ticks: Vec<u64> = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut prev: Option<u64> = None;
    for i in 0..count {
        let byte_offset = TTAG_HEADER_LEN + i * 8;
        let tick = match r.read_u64::<LittleEndian>() {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Err(FormatError::Truncated {
                    context: "record",
                    byte_offset,
                }
                .into())
            }
            Err(e) => return Err(Error::io("reading ttag record", e)),
        };
        if let Some(p) = prev {
            if tick <= p {
                return Err(FormatError::NonMonotonic {
                    record_index: i,
                    byte_offset,
                }
                .into());
            }
        }
        prev = Some(tick);
        ticks.push(tick);
    }
    EventStream::new(detector, resolution_ps, duration_ps, ticks)
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn write_ttag<P: AsRef<Path>>(stream: &EventStream, path: P) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    write_stream(stream, &mut w)?;
    w.flush()
        .map_err(|e| Error::io(format!("flushing {}", path.display()), e))
}

pub fn read_ttag<P: AsRef<Path>>(path: P) -> Result<EventStream> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_stream(BufReader::new(file))
}

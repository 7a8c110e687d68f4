//! Photon/click timestamp streams and their binary file format.
//!
//! File layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `b"HBTSTRM\0"`          |
//! | 8      | 4    | format version (`1`)          |
//! | 12     | 4    | reserved, zero                |
//! | 16     | 8    | duration, picoseconds (`u64`) |
//! | 24     | 8    | event count (`u64`)           |
//! | 32     | 8·n  | sorted timestamps, ps (`u64`) |

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Picoseconds per nanosecond.
pub const PS_PER_NS: f64 = 1e3;
/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

pub const MAGIC: [u8; 8] = *b"HBTSTRM\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

/// Ordered event timestamps in integer picosecond ticks since stream start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonStream {
    timestamps: Vec<u64>,
    duration: u64,
    label: String,
}

impl PhotonStream {
    /// Builds a stream, checking ordering and the `timestamp < duration` bound.
    pub fn new(timestamps: Vec<u64>, duration: u64, label: impl Into<String>) -> Result<Self> {
        if let Some(w) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidStream(format!(
                "timestamps decrease at index {}",
                w + 1
            )));
        }
        if let Some(&last) = timestamps.last() {
            if last >= duration {
                return Err(Error::InvalidStream(format!(
                    "timestamp {last} ps is not below duration {duration} ps"
                )));
            }
        }
        Ok(Self {
            timestamps,
            duration,
            label: label.into(),
        })
    }

    pub fn empty(duration: u64, label: impl Into<String>) -> Self {
        Self {
            timestamps: Vec::new(),
            duration,
            label: label.into(),
        }
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_sorted(timestamps: Vec<u64>, duration: u64, label: impl Into<String>) -> Self {
        debug_assert!(timestamps.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(timestamps.last().is_none_or(|&t| t < duration));
        Self {
            timestamps,
            duration,
            label: label.into(),
        }
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn into_timestamps(self) -> Vec<u64> {
        self.timestamps
    }

    /// Duration in picoseconds.
    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn duration_s(&self) -> f64 {
        self.duration as f64 / PS_PER_S
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean event rate in s⁻¹ (zero for a zero-length stream).
    pub fn rate_per_s(&self) -> f64 {
        if self.duration == 0 {
            0.0
        } else {
            self.len() as f64 / self.duration_s()
        }
    }

    /// Merges several streams of equal duration into one sorted stream.
    pub fn merge(streams: &[PhotonStream], label: impl Into<String>) -> Result<Self> {
        let Some(first) = streams.first() else {
            return Err(Error::InvalidStream("nothing to merge".into()));
        };
        if streams.iter().any(|s| s.duration != first.duration) {
            return Err(Error::InvalidStream("merged streams differ in duration".into()));
        }
        let mut merged = first.timestamps.clone();
        for s in &streams[1..] {
            merged = merge_sorted(&merged, &s.timestamps);
        }
        Ok(Self::from_sorted(merged, first.duration, label))
    }

    /// Serializes into the binary stream format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[0..8].copy_from_slice(&MAGIC);
        header[8..12].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[16..24].copy_from_slice(&self.duration.to_le_bytes());
        header[24..32].copy_from_slice(&(self.timestamps.len() as u64).to_le_bytes());
        out.write_all(&header)?;
        for t in &self.timestamps {
            out.write_all(&t.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the binary stream format, validating header and ordering.
    pub fn read_from<R: Read>(mut input: R, label: impl Into<String>) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::Format("truncated or missing 32-byte header".into()))?;
        if header[0..8] != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let duration = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let count = u64::from_le_bytes(header[24..32].try_into().unwrap());
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() as u64 != count.saturating_mul(8) {
            return Err(Error::Format(format!(
                "header announces {count} events but body holds {} bytes",
                body.len()
            )));
        }
        let timestamps = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(timestamps, duration, label).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes atomically (temporary file then rename).
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp)?;
            self.write_to(BufWriter::new(file))?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a stream file; the label is the file stem.
    pub fn read_file(path: &Path) -> Result<Self> {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), label)
    }
}

pub(crate) fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Converts nanoseconds to the nearest picosecond tick.
pub fn ns_to_ps(ns: f64) -> u64 {
    (ns * PS_PER_NS).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_unsorted_and_out_of_range() {
        assert!(PhotonStream::new(vec![3, 2], 10, "x").is_err());
        assert!(PhotonStream::new(vec![1, 10], 10, "x").is_err());
        assert!(PhotonStream::new(vec![1, 1, 9], 10, "x").is_ok());
    }

    #[test]
    fn header_layout_is_fixed() {
        let s = PhotonStream::new(vec![5, 7], 100, "s").unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 16);
        assert_eq!(&buf[0..8], b"HBTSTRM\0");
        assert_eq!(buf[8], 1);
        assert_eq!(&buf[16..24], &100u64.to_le_bytes());
        assert_eq!(&buf[24..32], &2u64.to_le_bytes());
        assert_eq!(&buf[32..40], &5u64.to_le_bytes());
    }

    #[test]
    fn truncated_input_is_a_format_error() {
        let s = PhotonStream::new(vec![5, 7], 100, "s").unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert!(matches!(PhotonStream::read_from(&buf[..20], "s"), Err(Error::Format(_))));
        assert!(matches!(PhotonStream::read_from(&buf[..44], "s"), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(PhotonStream::read_from(&buf[..], "s"), Err(Error::Format(_))));
    }

    #[test]
    fn merge_requires_equal_duration() {
        let a = PhotonStream::new(vec![1, 5], 10, "a").unwrap();
        let b = PhotonStream::new(vec![2, 5, 9], 10, "b").unwrap();
        let m = PhotonStream::merge(&[a.clone(), b], "m").unwrap();
        assert_eq!(m.timestamps(), &[1, 2, 5, 5, 9]);
        let c = PhotonStream::empty(11, "c");
        assert!(PhotonStream::merge(&[a, c], "m").is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(mut ts in proptest::collection::vec(0u64..1_000_000, 0..200)) {
            ts.sort_unstable();
            let s = PhotonStream::new(ts, 1_000_000, "rt").unwrap();
            let mut buf = Vec::new();
            s.write_to(&mut buf).unwrap();
            prop_assert_eq!(PhotonStream::read_from(&buf[..], "rt").unwrap(), s);
        }
    }
}

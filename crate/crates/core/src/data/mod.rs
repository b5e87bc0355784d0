//! Records, annotations and the dataset plumbing around them.

pub mod dataset;
pub mod features;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of leads in a clinical recording.
pub const N_LEADS: usize = 12;

/// Canonical lead order.
pub const LEAD_NAMES: [&str; N_LEADS] =
    ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

pub const LEAD_II: usize = 1;
pub const LEAD_V1: usize = 6;

/// A dense `rows × samples` matrix stored row-major (one row per lead or axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    rows: usize,
    samples: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn zeros(rows: usize, samples: usize) -> Self {
        Self { rows, samples, data: vec![0.0; rows * samples] }
    }

    pub fn from_vec(rows: usize, samples: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * samples {
            return Err(Error::shape(
                format!("{rows}x{samples} = {} values", rows * samples),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, samples, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let samples = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * samples);
        for r in rows {
            if r.len() != samples {
                return Err(Error::shape(format!("{samples} samples per row"), r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), samples, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.samples..(r + 1) * self.samples]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.samples..(r + 1) * self.samples]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, t: usize) -> f64 {
        self.data[r * self.samples + t]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Signal {
        Signal { rows: self.rows, samples: self.samples, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column `t` as a vector (one value per row).
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, t)).collect()
    }

    /// Values converted to `f32`, row-major. Network input.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub(crate) fn expect_rows(&self, rows: usize) -> Result<()> {
        if self.rows != rows {
            return Err(Error::shape(format!("{rows} rows"), format!("{} rows", self.rows)));
        }
        Ok(())
    }
}

/// AAMI heartbeat superclass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeatClass {
    N,
    S,
    V,
    F,
    Q,
}

impl BeatClass {
    pub const ALL: [BeatClass; 5] = [BeatClass::N, BeatClass::S, BeatClass::V, BeatClass::F, BeatClass::Q];

    pub fn as_char(self) -> char {
        match self {
            BeatClass::N => 'N',
            BeatClass::S => 'S',
            BeatClass::V => 'V',
            BeatClass::F => 'F',
            BeatClass::Q => 'Q',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'N' => Some(BeatClass::N),
            'S' => Some(BeatClass::S),
            'V' => Some(BeatClass::V),
            'F' => Some(BeatClass::F),
            'Q' => Some(BeatClass::Q),
            _ => None,
        }
    }
}

impl fmt::Display for BeatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// R-peak positions with one AAMI class per peak.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatAnnotation {
    pub r_peaks: Vec<usize>,
    pub classes: Vec<BeatClass>,
}

impl BeatAnnotation {
    pub fn new(r_peaks: Vec<usize>, classes: Vec<BeatClass>) -> Self {
        Self { r_peaks, classes }
    }

    /// Checks ordering, arity, range and the refractory spacing.
    pub fn validate(&self, n_samples: usize, sampling_rate: f64) -> Result<()> {
        if self.r_peaks.len() != self.classes.len() {
            return Err(Error::Integrity(format!(
                "{} r-peaks but {} classes",
                self.r_peaks.len(),
                self.classes.len()
            )));
        }
        let min_gap = (0.2 * sampling_rate).floor() as usize;
        for w in self.r_peaks.windows(2) {
            if w[1] <= w[0] || w[1] - w[0] < min_gap {
                return Err(Error::Integrity(format!(
                    "r-peaks {} and {} violate ordering or the 200 ms refractory gap",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = self.r_peaks.last() {
            if last >= n_samples {
                return Err(Error::Integrity(format!("r-peak {last} outside [0, {n_samples})")));
            }
        }
        Ok(())
    }
}

/// Sample-wise wave label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum WaveClass {
    Background = 0,
    P = 1,
    Qrs = 2,
    T = 3,
}

impl WaveClass {
    pub const ALL: [WaveClass; 4] = [WaveClass::Background, WaveClass::P, WaveClass::Qrs, WaveClass::T];
    pub const WAVES: [WaveClass; 3] = [WaveClass::P, WaveClass::Qrs, WaveClass::T];

    pub fn from_u8(v: u8) -> Option<Self> {
        WaveClass::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveClass::Background => "background",
            WaveClass::P => "P",
            WaveClass::Qrs => "QRS",
            WaveClass::T => "T",
        }
    }
}

pub const N_WAVE_CLASSES: usize = 4;

/// Per-sample wave labels over `{0: background, 1: P, 2: QRS, 3: T}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn background(n: usize) -> Self {
        Self { labels: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Maximal runs of equal nonzero label as `(class, start, end)`.
    pub fn runs(&self) -> Vec<(u8, usize, usize)> {
        let mut out = Vec::new();
        let mut t = 0;
        while t < self.labels.len() {
            let c = self.labels[t];
            let start = t;
            while t < self.labels.len() && self.labels[t] == c {
                t += 1;
            }
            if c != 0 {
                out.push((c, start, t));
            }
        }
        out
    }

    /// Every contiguous nonzero stretch carries a single class and labels are in range.
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.labels.iter().find(|&&l| l as usize >= N_WAVE_CLASSES) {
            return Err(Error::Integrity(format!("mask label {bad} out of range")));
        }
        for w in self.labels.windows(2) {
            if w[0] != 0 && w[1] != 0 && w[0] != w[1] {
                return Err(Error::Integrity("two wave classes touch without background".into()));
            }
        }
        Ok(())
    }
}

/// Fixed-length per-record feature vector feeding the soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

/// One recording plus whatever annotations came with it.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub signal: Signal,
    pub sampling_rate: f64,
    pub fold: Option<u8>,
    pub beats: Option<BeatAnnotation>,
    pub wave_mask: Option<SegmentationMask>,
    pub rhythm_labels: Option<BTreeSet<String>>,
}

impl EcgRecord {
    pub fn new(record_id: impl Into<String>, signal: Signal, sampling_rate: f64) -> Self {
        Self {
            record_id: record_id.into(),
            signal,
            sampling_rate,
            fold: None,
            beats: None,
            wave_mask: None,
            rhythm_labels: None,
        }
    }

    pub fn n_leads(&self) -> usize {
        self.signal.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.signal.samples()
    }

    pub fn lead_ii(&self) -> &[f64] {
        self.signal.row(LEAD_II)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !self.signal.is_finite() {
            return Err(Error::Integrity(format!("record {} has non-finite samples", self.record_id)));
        }
        if let Some(f) = self.fold {
            if !(1..=10).contains(&f) {
                return Err(Error::Integrity(format!("record {} fold {f} outside 1..10", self.record_id)));
            }
        }
        if let Some(b) = &self.beats {
            b.validate(self.n_samples(), self.sampling_rate)?;
        }
        if let Some(m) = &self.wave_mask {
            if m.len() != self.n_samples() {
                return Err(Error::Integrity(format!(
                    "record {} mask length {} != {} samples",
                    self.record_id,
                    m.len(),
                    self.n_samples()
                )));
            }
            m.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_runs_and_validation() {
        let m = SegmentationMask { labels: vec![0, 1, 1, 0, 2, 2, 2, 0, 3] };
        assert_eq!(m.runs(), vec![(1, 1, 3), (2, 4, 7), (3, 8, 9)]);
        assert!(m.validate().is_ok());
        let bad = SegmentationMask { labels: vec![0, 1, 2, 0] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn refractory_gap_enforced() {
        let ann = BeatAnnotation::new(vec![100, 150], vec![BeatClass::N, BeatClass::N]);
        assert!(ann.validate(1000, 500.0).is_err());
        let ok = BeatAnnotation::new(vec![100, 200], vec![BeatClass::N, BeatClass::V]);
        assert!(ok.validate(1000, 500.0).is_ok());
    }

    #[test]
    fn beat_class_chars_round_trip() {
        for c in BeatClass::ALL {
            assert_eq!(BeatClass::from_char(c.as_char()), Some(c));
        }
        assert_eq!(BeatClass::from_char('x'), None);
    }
}

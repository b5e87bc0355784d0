//! Heartbeat-level plumbing: R-peak detection, beat windows, projection of
//! R-peaks onto encoder frames, ROI pooling and pseudo-labelling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::features::{mean_std, qrs_width_estimate, r_peaks_of, rms};
use crate::data::{BeatClass, EcgRecord, Signal, LEAD_II, LEAD_V1};
use crate::error::{Error, Result};
use crate::nn::FeatureMap;

/// Default beat window: 352 samples (0.704 s at 500 Hz), a multiple of 16.
pub const DEFAULT_BEAT_WINDOW: usize = 352;

/// Minimum spacing between detected beats.
pub const REFRACTORY_S: f64 = 0.2;

/// Beats whose window is more than this fraction padding are not contrasted.
pub const MAX_PADDING_FRACTION: f64 = 0.5;

/// R-peak detector on a single lead.
///
/// The envelope is the squared central difference smoothed by a centred 50 ms
/// box filter. Peaks are local maxima of the envelope above 20 % of its
/// maximum, thinned greedily (strongest first) to the 200 ms refractory gap.
pub fn detect_r_peaks(lead: &[f64], sampling_rate: f64) -> Result<Vec<usize>> {
    let d = lead.len();
    if (d as f64) < 2.0 * sampling_rate {
        return Err(Error::Config(format!("need at least 2 s of signal, got {d} samples at {sampling_rate} Hz")));
    }
    let (_, sd) = mean_std(lead);
    if !(sd > 0.0) {
        return Err(Error::NoBeats("flat signal".into()));
    }
    let mut sq = vec![0.0; d];
    for t in 1..d - 1 {
        let s = lead[t + 1] - lead[t - 1];
        sq[t] = s * s;
    }
    let half = ((0.05 * sampling_rate).round() as usize / 2).max(1);
    let mut prefix = vec![0.0; d + 1];
    for t in 0..d {
        prefix[t + 1] = prefix[t] + sq[t];
    }
    let env: Vec<f64> = (0..d)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(d);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let max = env.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::NoBeats("flat envelope".into()));
    }
    let thr = 0.2 * max;
    let mut candidates: Vec<usize> =
        (1..d - 1).filter(|&t| env[t] >= thr && env[t] >= env[t - 1] && env[t] > env[t + 1]).collect();
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let gap = (REFRACTORY_S * sampling_rate).ceil() as usize;
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= gap) {
            accepted.push(c);
        }
    }
    if accepted.is_empty() {
        return Err(Error::NoBeats("no envelope peak above threshold".into()));
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// A 12×n crop centred on an R-peak, zero-padded where it leaves the record.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatCrop {
    pub signal: Signal,
    /// Window start in record coordinates; negative when padded on the left.
    pub start: isize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl BeatCrop {
    pub fn padding_fraction(&self) -> f64 {
        (self.pad_left + self.pad_right) as f64 / self.signal.samples() as f64
    }
}

/// Window `[r_peak - n/2, r_peak + n/2)` of every lead.
pub fn crop_beat(ecg: &Signal, r_peak: usize, n: usize) -> Result<BeatCrop> {
    let d = ecg.samples();
    if n > d {
        return Err(Error::Config(format!("beat window {n} longer than record ({d} samples)")));
    }
    if !n.is_multiple_of(2) {
        return Err(Error::Config(format!("beat window {n} must be even")));
    }
    if r_peak >= d {
        return Err(Error::Validation(format!("r_peak {r_peak} outside [0, {d})")));
    }
    let start = r_peak as isize - (n / 2) as isize;
    let end = start + n as isize;
    let src_lo = start.max(0) as usize;
    let src_hi = (end.min(d as isize)) as usize;
    let pad_left = (src_lo as isize - start) as usize;
    let pad_right = (end - src_hi as isize) as usize;
    let mut out = Signal::zeros(ecg.rows(), n);
    for lead in 0..ecg.rows() {
        out.row_mut(lead)[pad_left..pad_left + (src_hi - src_lo)].copy_from_slice(&ecg.row(lead)[src_lo..src_hi]);
    }
    Ok(BeatCrop { signal: out, start, pad_left, pad_right })
}

/// Encoder-frame interval `[f_start, f_end)` covered by a beat window.
pub fn map_rpeak_to_frames(r_peak: usize, n: usize, stride: usize, n_frames: usize) -> (usize, usize) {
    assert!(stride >= 1 && n_frames >= 1, "stride and n_frames must be positive");
    let lo = r_peak as i64 - (n / 2) as i64;
    let hi = r_peak as i64 + (n / 2) as i64;
    let s = stride as i64;
    let f_start = lo.div_euclid(s).clamp(0, n_frames as i64 - 1) as usize;
    let f_end = (-((-hi).div_euclid(s))).clamp(0, n_frames as i64) as usize;
    (f_start, f_end.max(f_start + 1))
}

/// One heartbeat located in a record and on the encoder's frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatWindow {
    pub record_id: String,
    pub r_peak: usize,
    /// Sample interval actually covered by the signal, `[start, end)`.
    pub span: (usize, usize),
    pub frame_span: (usize, usize),
    pub padding_fraction: f64,
}

pub fn beat_windows(
    record_id: &str,
    r_peaks: &[usize],
    n: usize,
    n_samples: usize,
    stride: usize,
    n_frames: usize,
) -> Vec<BeatWindow> {
    r_peaks
        .iter()
        .map(|&r| {
            let start = r.saturating_sub(n / 2);
            let end = (r + n / 2).min(n_samples);
            let covered = end.saturating_sub(start);
            BeatWindow {
                record_id: record_id.to_string(),
                r_peak: r,
                span: (start, end),
                frame_span: map_rpeak_to_frames(r, n, stride, n_frames),
                padding_fraction: 1.0 - covered as f64 / n as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolReducer {
    #[default]
    Mean,
    Max,
}

/// Pools frames `[f_start, f_end)` of a channel-major feature map into one vector.
pub fn roi_pool(map: &FeatureMap, window: (usize, usize), reducer: PoolReducer) -> Result<Vec<f32>> {
    let (f0, f1) = window;
    if f1 <= f0 || f1 > map.frames {
        return Err(Error::Validation(format!("ROI window [{f0}, {f1}) invalid for {} frames", map.frames)));
    }
    Ok((0..map.channels)
        .map(|c| {
            let row = &map.channel(c)[f0..f1];
            match reducer {
                PoolReducer::Mean => row.iter().sum::<f32>() / row.len() as f32,
                PoolReducer::Max => row.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
            }
        })
        .collect())
}

/// Everything a labeler may look at for one beat.
#[derive(Debug, Clone)]
pub struct BeatContext<'a> {
    pub record_id: &'a str,
    pub r_peak: usize,
    /// Lead-II crop of width n centred on the R-peak.
    pub lead_ii: &'a [f64],
    pub sampling_rate: f64,
    pub rr_prev_s: Option<f64>,
    pub mean_rr_s: Option<f64>,
}

/// Source of hard beat classes for beat-level contrasting.
pub trait PseudoLabeler: Send + Sync {
    fn classify(&self, beat: &BeatContext<'_>) -> BeatClass;
}

/// Looks beats up in generator (or reference) annotations.
#[derive(Debug, Clone, Default)]
pub struct OracleLabeler {
    truth: HashMap<(String, usize), BeatClass>,
}

impl OracleLabeler {
    pub fn from_records(records: &[EcgRecord]) -> Self {
        let mut truth = HashMap::new();
        for r in records {
            if let Some(b) = &r.beats {
                for (&p, &c) in b.r_peaks.iter().zip(&b.classes) {
                    truth.insert((r.record_id.clone(), p), c);
                }
            }
        }
        Self { truth }
    }
}

impl PseudoLabeler for OracleLabeler {
    fn classify(&self, beat: &BeatContext<'_>) -> BeatClass {
        // Unknown beats are unclassifiable.
        self.truth.get(&(beat.record_id.to_string(), beat.r_peak)).copied().unwrap_or(BeatClass::Q)
    }
}

/// Width/prematurity rules standing in for a trained lead-II beat classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleLabeler {
    /// QRS estimates wider than this are ventricular.
    pub wide_qrs_s: f64,
    /// Beats arriving earlier than this fraction of the mean RR are supraventricular.
    pub premature_ratio: f64,
}

impl Default for RuleLabeler {
    fn default() -> Self {
        Self { wide_qrs_s: 0.07, premature_ratio: 0.8 }
    }
}

impl PseudoLabeler for RuleLabeler {
    fn classify(&self, beat: &BeatContext<'_>) -> BeatClass {
        let width = qrs_width_estimate(beat.lead_ii, beat.lead_ii.len() / 2, beat.sampling_rate);
        if width > self.wide_qrs_s {
            return BeatClass::V;
        }
        match (beat.rr_prev_s, beat.mean_rr_s) {
            (Some(prev), Some(mean)) if prev < self.premature_ratio * mean => BeatClass::S,
            _ => BeatClass::N,
        }
    }
}

/// One class per R-peak, each from a lead-II crop of width `n`.
pub fn pseudo_label_beats(record: &EcgRecord, labeler: &dyn PseudoLabeler, n: usize) -> Result<Vec<BeatClass>> {
    let peaks = r_peaks_of(record)?;
    if peaks.is_empty() {
        return Err(Error::NoBeats(format!("record {} has no R-peaks", record.record_id)));
    }
    let fs = record.sampling_rate;
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let mean_rr = if rr.is_empty() { None } else { Some(rr.iter().sum::<f64>() / rr.len() as f64) };
    let lead_ii = Signal::from_vec(1, record.n_samples(), record.lead_ii().to_vec())?;
    peaks
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let crop = crop_beat(&lead_ii, p, n)?;
            let ctx = BeatContext {
                record_id: &record.record_id,
                r_peak: p,
                lead_ii: crop.signal.row(0),
                sampling_rate: fs,
                rr_prev_s: if k > 0 { Some(rr[k - 1]) } else { None },
                mean_rr_s: mean_rr,
            };
            Ok(labeler.classify(&ctx))
        })
        .collect()
}

pub const N_BEAT_FEATURES: usize = 6;

/// Per-beat features for soft beat targets: preceding RR, following RR, QRS
/// width, lead-II R amplitude, and lead-II / V1 RMS over the beat window.
pub fn beat_features(record: &EcgRecord, peaks: &[usize], n: usize) -> Result<Vec<Vec<f64>>> {
    let fs = record.sampling_rate;
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let mean_rr = if rr.is_empty() { 1.0 } else { rr.iter().sum::<f64>() / rr.len() as f64 };
    let d = record.n_samples();
    peaks
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if p >= d {
                return Err(Error::Validation(format!("r_peak {p} outside record")));
            }
            let lo = p.saturating_sub(n / 2);
            let hi = (p + n / 2).min(d);
            let ii = &record.signal.row(LEAD_II)[lo..hi];
            let v1 = &record.signal.row(LEAD_V1)[lo..hi];
            Ok(vec![
                if k > 0 { rr[k - 1] } else { mean_rr },
                rr.get(k).copied().unwrap_or(mean_rr),
                qrs_width_estimate(record.lead_ii(), p, fs),
                record.lead_ii()[p],
                rms(ii),
                rms(v1),
            ])
        })
        .collect()
}

//! The fixed 16-value feature set behind the soft targets.
//!
//! Layout: mean heart rate (bpm), RR standard deviation (s), mean QRS width
//! estimate (s), RMS amplitude of each of the 12 leads (mV) and the mean
//! lead-II amplitude at the R-peaks (mV).

use super::{EcgRecord, FeatureVector, LEAD_NAMES, N_LEADS};
use crate::beats::detect_r_peaks;
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 3 + N_LEADS + 1;

/// Half-width of the search window around an R-peak for the QRS width estimate.
const QRS_SEARCH_S: f64 = 0.1;
/// Fraction of the peak slope that delimits the QRS complex.
const QRS_SLOPE_FRACTION: f64 = 0.3;

pub fn feature_names() -> Vec<String> {
    let mut names = vec!["mean_hr_bpm".to_string(), "rr_std_s".to_string(), "qrs_width_s".to_string()];
    names.extend(LEAD_NAMES.iter().map(|l| format!("rms_{l}")));
    names.push("r_amp_ii_mv".to_string());
    names
}

/// Annotated R-peaks when present, otherwise detected on lead II.
pub fn r_peaks_of(record: &EcgRecord) -> Result<Vec<usize>> {
    match &record.beats {
        Some(b) => Ok(b.r_peaks.clone()),
        None => detect_r_peaks(record.lead_ii(), record.sampling_rate),
    }
}

/// QRS duration around one R-peak from the smoothed slope of `lead`.
///
/// Slope is the 4-sample central difference `(x[t+2] - x[t-2]) / 4`; the QRS
/// spans the first to last sample within ±100 ms whose absolute slope reaches
/// 30 % of the window maximum. Returns 0 when the window is flat.
pub fn qrs_width_estimate(lead: &[f64], r_peak: usize, sampling_rate: f64) -> f64 {
    let half = (QRS_SEARCH_S * sampling_rate).round() as usize;
    let lo = r_peak.saturating_sub(half).max(2);
    let hi = (r_peak + half + 1).min(lead.len().saturating_sub(2));
    if hi <= lo {
        return 0.0;
    }
    let slope: Vec<f64> = (lo..hi).map(|t| ((lead[t + 2] - lead[t - 2]) / 4.0).abs()).collect();
    let peak = slope.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0.0;
    }
    let thr = QRS_SLOPE_FRACTION * peak;
    let first = slope.iter().position(|&s| s >= thr).unwrap_or(0);
    let last = slope.iter().rposition(|&s| s >= thr).unwrap_or(first);
    (last - first + 1) as f64 / sampling_rate
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn extract_features(record: &EcgRecord) -> Result<FeatureVector> {
    record.signal.expect_rows(N_LEADS)?;
    let peaks = match r_peaks_of(record) {
        Ok(p) => p,
        Err(Error::NoBeats(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    if peaks.len() < 2 {
        return Err(Error::InsufficientBeats { record_id: record.record_id.clone(), found: peaks.len() });
    }
    let fs = record.sampling_rate;
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let (mean_rr, rr_std) = mean_std(&rr);
    let lead_ii = record.lead_ii();
    let widths: Vec<f64> = peaks.iter().map(|&p| qrs_width_estimate(lead_ii, p, fs)).collect();
    let (qrs_width, _) = mean_std(&widths);
    let r_amp = peaks.iter().map(|&p| lead_ii[p]).sum::<f64>() / peaks.len() as f64;

    let mut values = Vec::with_capacity(N_FEATURES);
    values.push(60.0 / mean_rr);
    values.push(rr_std);
    values.push(qrs_width);
    values.extend((0..N_LEADS).map(|l| rms(record.signal.row(l))));
    values.push(r_amp);
    Ok(FeatureVector { values, names: feature_names() })
}

/// Per-feature z-scoring fitted on one split and applied to any other.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let f = rows.first().map(Vec::len).ok_or_else(|| Error::Config("cannot fit scaler on zero rows".into()))?;
        if rows.iter().any(|r| r.len() != f) {
            return Err(Error::shape(format!("{f} features per row"), "ragged rows"));
        }
        let mut mean = Vec::with_capacity(f);
        let mut std = Vec::with_capacity(f);
        for j in 0..f {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (m, s) = mean_std(&col);
            mean.push(m);
            // Constant features stay centred rather than blowing up.
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, RhythmClass, SynthConfig};
    use crate::data::Signal;

    #[test]
    fn seed_7_golden_vector() {
        // Reference values from an independent numpy implementation of each definition.
        const GOLDEN: [f64; N_FEATURES] = [
            68.46188954815153, 0.013588230201170436, 0.04181818181818181, 0.0850145705128367,
            0.09516466205292679, 0.024160643087263237, 0.08942013689861693, 0.04051578348031988,
            0.05489221701797461, 0.0788400713685987, 0.0381133829727812, 0.04748223519111161,
            0.09063800173321122, 0.0391217536679793, 0.11479875530944854, 0.6002945801374225,
        ];
        let rec = &synth_generate(&SynthConfig::single_class(RhythmClass::Regular, 1, 7)).unwrap()[0];
        let f = extract_features(rec).unwrap();
        for (i, (got, want)) in f.values.iter().zip(GOLDEN).enumerate() {
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{}: {got} vs {want}", f.names[i]);
        }
    }

    #[test]
    fn regular_rr_gives_exact_rate() {
        let cfg = SynthConfig { fixed_rr_s: Some(1.0), ..SynthConfig::single_class(RhythmClass::Regular, 1, 3) };
        let rec = &synth_generate(&cfg).unwrap()[0];
        let f = extract_features(rec).unwrap();
        assert_eq!(f.values.len(), N_FEATURES);
        assert_eq!(f.names.len(), N_FEATURES);
        assert!((f.values[0] - 60.0).abs() < 1e-12);
        assert_eq!(f.values[1], 0.0);
    }

    #[test]
    fn amplitude_scaling_law() {
        let rec = synth_generate(&SynthConfig { n_records: 1, seed: 4, ..SynthConfig::default() }).unwrap().remove(0);
        let mut scaled = rec.clone();
        scaled.signal = rec.signal.scaled(2.0);
        let a = extract_features(&rec).unwrap().values;
        let b = extract_features(&scaled).unwrap().values;
        for j in 0..3 {
            assert_eq!(a[j], b[j], "timing feature {j}");
        }
        for j in 3..N_FEATURES {
            assert!((b[j] - 2.0 * a[j]).abs() <= 1e-12 * a[j].abs().max(1.0), "feature {j}");
        }
    }

    #[test]
    fn too_few_beats() {
        let cfg = SynthConfig { max_beats: Some(1), ..SynthConfig::single_class(RhythmClass::Regular, 1, 3) };
        let rec = &synth_generate(&cfg).unwrap()[0];
        assert!(matches!(extract_features(rec), Err(Error::InsufficientBeats { found: 1, .. })));
        let flat = crate::data::EcgRecord::new("flat", Signal::zeros(12, 5000), 500.0);
        assert!(matches!(extract_features(&flat), Err(Error::InsufficientBeats { found: 0, .. })));
    }

    #[test]
    fn scaler_standardises() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = FeatureScaler::fit(&rows).unwrap();
        assert_eq!(s.transform(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(s.transform(&rows[1]), vec![1.0, 0.0]);
    }
}

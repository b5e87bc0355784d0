//! Parametric synthetic 12-lead ECG with exact ground truth.
//!
//! Each beat is a handful of Gaussian bumps (P, Q, R, S, T) on a 3-axis dipole.
//! The eight independent leads (I, II, V1..V6) are the pseudo-inverse Kors
//! lead vectors applied to the dipole; III, aVR, aVL and aVF follow from
//! Einthoven/Goldberger. R-peak positions, AAMI classes and wave masks come
//! straight from the construction.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BeatAnnotation, BeatClass, EcgRecord, SegmentationMask, Signal, WaveClass, N_LEADS};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seeds::rng_for;
use crate::vcg::KorsTransform;

/// Wave masks cover `center ± MASK_HALF_WIDTH_SIGMAS · σ` of each bump.
const MASK_HALF_WIDTH_SIGMAS: f64 = 2.5;

/// Rhythm classes the generator can draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhythmClass {
    /// Sinus rhythm, RR 0.8–1.0 s with ±3 % jitter.
    Regular,
    /// Fibrillation-like: no P waves, atrial f-waves, RR varying ±35 %.
    Irregular,
    /// Sinus rhythm with premature supraventricular and ventricular beats.
    Ectopic,
    /// Sinus tachycardia, RR 0.5–0.6 s.
    Tachycardia,
}

impl RhythmClass {
    pub const ALL: [RhythmClass; 4] =
        [RhythmClass::Regular, RhythmClass::Irregular, RhythmClass::Ectopic, RhythmClass::Tachycardia];

    pub fn name(self) -> &'static str {
        match self {
            RhythmClass::Regular => "regular",
            RhythmClass::Irregular => "irregular",
            RhythmClass::Ectopic => "ectopic",
            RhythmClass::Tachycardia => "tachycardia",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        RhythmClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_records: usize,
    pub duration_s: f64,
    pub sampling_rate: f64,
    /// Probability of each rhythm class; must sum to 1.
    pub class_mix: Vec<(RhythmClass, f64)>,
    pub seed: u64,
    /// White measurement noise per lead, mV.
    pub noise_mv: f64,
    /// Peak baseline-wander amplitude per lead, mV.
    pub wander_mv: f64,
    /// Stop after this many beats.
    pub max_beats: Option<usize>,
    /// Force a perfectly regular rhythm with this RR interval (seconds).
    pub fixed_rr_s: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 64,
            duration_s: 10.0,
            sampling_rate: 500.0,
            class_mix: vec![
                (RhythmClass::Regular, 0.25),
                (RhythmClass::Irregular, 0.25),
                (RhythmClass::Ectopic, 0.25),
                (RhythmClass::Tachycardia, 0.25),
            ],
            seed: 0,
            noise_mv: 0.01,
            wander_mv: 0.05,
            max_beats: None,
            fixed_rr_s: None,
        }
    }
}

impl SynthConfig {
    pub fn single_class(class: RhythmClass, n_records: usize, seed: u64) -> Self {
        Self { n_records, class_mix: vec![(class, 1.0)], seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 {
            return Err(Error::Config("n_records must be at least 1".into()));
        }
        if self.sampling_rate < 100.0 {
            return Err(Error::Config(format!("sampling_rate {} < 100 Hz", self.sampling_rate)));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.class_mix.is_empty() || self.class_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::Config("class_mix needs non-negative weights".into()));
        }
        let total: f64 = self.class_mix.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class_mix weights sum to {total}, not 1")));
        }
        if let Some(rr) = self.fixed_rr_s {
            if !(rr >= 0.2) {
                return Err(Error::Config(format!("fixed_rr_s {rr} below the 200 ms refractory period")));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sampling_rate).round() as usize
    }
}

/// Generates `config.n_records` records. Record `i` depends only on `(seed, i)`.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<EcgRecord>> {
    synth_generate_with(config, Exec::default())
}

pub fn synth_generate_with(config: &SynthConfig, exec: Exec) -> Result<Vec<EcgRecord>> {
    config.validate()?;
    let kors = KorsTransform::new();
    Ok(exec.map_range(config.n_records, |i| generate_one(config, &kors, i)))
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    offset_s: f64,
    sigma_s: f64,
    amp: f64,
    dir: [f64; 3],
}

struct Wave {
    class: WaveClass,
    bumps: Vec<Bump>,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

fn rotate(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

struct Morphology {
    p: [f64; 3],
    p_ectopic: [f64; 3],
    r: [f64; 3],
    s: [f64; 3],
    t: [f64; 3],
    v: [f64; 3],
    gain: f64,
    p_amp: f64,
    t_amp: f64,
}

impl Morphology {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let axis = normalize([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)]);
        let rot = crate::vcg::rotation_matrix(rng.random_range(-15.0..15.0), axis).expect("unit axis");
        let p = rotate(&rot, normalize([0.5, 0.8, -0.1]));
        Self {
            p,
            p_ectopic: [p[0], -p[1], p[2]],
            r: rotate(&rot, normalize([0.6, 0.7, -0.4])),
            s: rotate(&rot, normalize([-0.5, -0.3, 0.8])),
            t: rotate(&rot, normalize([0.6, 0.6, 0.2])),
            v: rotate(&rot, normalize([-0.7, 0.2, 0.7])),
            gain: rng.random_range(0.8..1.25),
            p_amp: rng.random_range(0.12..0.2),
            t_amp: rng.random_range(0.25..0.4),
        }
    }
}

/// The RR schedule: R-peak sample positions and per-beat classes.
fn beat_schedule<R: Rng>(config: &SynthConfig, class: RhythmClass, rng: &mut R) -> (Vec<usize>, Vec<BeatClass>) {
    let fs = config.sampling_rate;
    let d = config.n_samples();
    let margin = (0.1 * fs).round() as usize;
    let base_rr = match (config.fixed_rr_s, class) {
        (Some(rr), _) => rr,
        (None, RhythmClass::Regular | RhythmClass::Ectopic) => rng.random_range(0.8..1.0),
        (None, RhythmClass::Irregular) => rng.random_range(0.6..0.9),
        (None, RhythmClass::Tachycardia) => rng.random_range(0.5..0.6),
    };
    let mut peaks = Vec::new();
    let mut classes = Vec::new();
    let mut r = (rng.random_range(0.15..0.6) * fs).round() as usize;
    let mut next_class = BeatClass::N;
    let max_beats = config.max_beats.unwrap_or(usize::MAX);
    while r + margin < d && peaks.len() < max_beats {
        peaks.push(r);
        classes.push(next_class);
        let rr = if config.fixed_rr_s.is_some() {
            base_rr
        } else {
            match class {
                RhythmClass::Regular | RhythmClass::Tachycardia => base_rr * rng.random_range(0.97..1.03),
                RhythmClass::Irregular => base_rr * rng.random_range(0.65..1.35),
                RhythmClass::Ectopic if next_class != BeatClass::N => {
                    // compensatory pause after a premature beat
                    next_class = BeatClass::N;
                    base_rr * rng.random_range(1.25..1.4)
                }
                RhythmClass::Ectopic if rng.random_bool(0.25) => {
                    next_class = if rng.random_bool(0.5) { BeatClass::V } else { BeatClass::S };
                    base_rr * rng.random_range(0.6..0.7)
                }
                RhythmClass::Ectopic => base_rr * rng.random_range(0.97..1.03),
            }
        };
        r += (rr * fs).round() as usize;
    }
    (peaks, classes)
}

fn beat_waves(class: BeatClass, rr_prev: f64, m: &Morphology, rng: &mut impl Rng) -> Vec<Wave> {
    let jitter = rng.random_range(0.95..1.05) * m.gain;
    let pr = (0.12 + 0.12 * (rr_prev - 0.5)).clamp(0.12, 0.18);
    let t_offset = 0.25 * rr_prev.sqrt() + 0.03;
    let normal_qrs = |amp_r: f64| Wave {
        class: WaveClass::Qrs,
        bumps: vec![
            Bump { offset_s: -0.022, sigma_s: 0.007, amp: 0.12 * amp_r, dir: neg(m.r) },
            Bump { offset_s: 0.0, sigma_s: 0.009, amp: amp_r, dir: m.r },
            Bump { offset_s: 0.024, sigma_s: 0.008, amp: 0.25 * amp_r, dir: m.s },
        ],
    };
    match class {
        BeatClass::V => vec![
            Wave {
                class: WaveClass::Qrs,
                bumps: vec![
                    Bump { offset_s: -0.044, sigma_s: 0.015, amp: 0.2 * jitter, dir: neg(m.v) },
                    Bump { offset_s: 0.0, sigma_s: 0.02, amp: 1.3 * jitter, dir: m.v },
                    Bump { offset_s: 0.048, sigma_s: 0.018, amp: 0.35 * jitter, dir: m.s },
                ],
            },
            Wave {
                class: WaveClass::T,
                bumps: vec![Bump { offset_s: t_offset + 0.04, sigma_s: 0.04, amp: 0.45 * jitter, dir: neg(m.v) }],
            },
        ],
        BeatClass::S => vec![
            Wave {
                class: WaveClass::P,
                bumps: vec![Bump { offset_s: -0.11, sigma_s: 0.016, amp: m.p_amp * jitter, dir: m.p_ectopic }],
            },
            normal_qrs(jitter),
            Wave {
                class: WaveClass::T,
                bumps: vec![Bump { offset_s: t_offset, sigma_s: 0.04, amp: m.t_amp * jitter, dir: m.t }],
            },
        ],
        _ => vec![
            Wave {
                class: WaveClass::P,
                bumps: vec![Bump { offset_s: -pr, sigma_s: 0.018, amp: m.p_amp * jitter, dir: m.p }],
            },
            normal_qrs(jitter),
            Wave {
                class: WaveClass::T,
                bumps: vec![Bump { offset_s: t_offset, sigma_s: 0.04, amp: m.t_amp * jitter, dir: m.t }],
            },
        ],
    }
}

fn add_bump(dipole: &mut [Vec<f64>; 3], center_s: f64, b: &Bump, fs: f64) {
    let d = dipole[0].len();
    let c = center_s * fs;
    let sigma = b.sigma_s * fs;
    let lo = (c - 5.0 * sigma).floor().max(0.0) as usize;
    let hi = ((c + 5.0 * sigma).ceil().max(0.0) as usize).min(d);
    for t in lo..hi {
        let x = (t as f64 - c) / sigma;
        let g = b.amp * (-0.5 * x * x).exp();
        for axis in 0..3 {
            dipole[axis][t] += g * b.dir[axis];
        }
    }
}

fn generate_one(config: &SynthConfig, kors: &KorsTransform, index: usize) -> EcgRecord {
    let mut rng = rng_for(config.seed, &[index as u64]);
    let fs = config.sampling_rate;
    let d = config.n_samples();
    let class = pick_class(&config.class_mix, rng.random::<f64>());
    let morph = Morphology::draw(&mut rng);
    let (peaks, classes) = beat_schedule(config, class, &mut rng);

    let mut dipole = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut spans: Vec<(WaveClass, usize, usize)> = Vec::new();
    let irregular = class == RhythmClass::Irregular;
    for (k, (&r, &bc)) in peaks.iter().zip(&classes).enumerate() {
        let rr_prev = if k > 0 { (r - peaks[k - 1]) as f64 / fs } else { 0.85 };
        let t_r = r as f64 / fs;
        for wave in beat_waves(bc, rr_prev, &morph, &mut rng) {
            if irregular && wave.class == WaveClass::P {
                continue;
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for b in &wave.bumps {
                add_bump(&mut dipole, t_r + b.offset_s, b, fs);
                lo = lo.min(b.offset_s - MASK_HALF_WIDTH_SIGMAS * b.sigma_s);
                hi = hi.max(b.offset_s + MASK_HALF_WIDTH_SIGMAS * b.sigma_s);
            }
            let start = ((t_r + lo) * fs).round();
            let end = ((t_r + hi) * fs).round() + 1.0;
            if end <= 0.0 {
                continue;
            }
            spans.push((wave.class, start.max(0.0) as usize, (end as usize).min(d)));
        }
    }
    if irregular {
        // Atrial f-waves along the P axis.
        for _ in 0..3 {
            let f = rng.random_range(4.0..8.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.02..0.04) * morph.gain;
            for t in 0..d {
                let v = amp * (std::f64::consts::TAU * f * t as f64 / fs + phase).sin();
                for axis in 0..3 {
                    dipole[axis][t] += v * morph.p[axis];
                }
            }
        }
    }

    let mut signal = Signal::zeros(N_LEADS, d);
    let inv = kors.inverse();
    // Independent leads: I, II, V1..V6.
    for lead in [0usize, 1, 6, 7, 8, 9, 10, 11] {
        let w = inv[lead];
        let row = signal.row_mut(lead);
        for t in 0..d {
            row[t] = w[0] * dipole[0][t] + w[1] * dipole[1][t] + w[2] * dipole[2][t];
        }
    }
    let noise = Normal::new(0.0, config.noise_mv.max(0.0)).expect("finite sigma");
    for lead in [0usize, 1, 6, 7, 8, 9, 10, 11] {
        let f = rng.random_range(0.15..0.4);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.0..=config.wander_mv.max(0.0));
        let row = signal.row_mut(lead);
        for (t, v) in row.iter_mut().enumerate() {
            *v += amp * (std::f64::consts::TAU * f * t as f64 / fs + phase).sin();
            if config.noise_mv > 0.0 {
                *v += noise.sample(&mut rng);
            }
        }
    }
    for t in 0..d {
        let i = signal.get(0, t);
        let ii = signal.get(1, t);
        signal.row_mut(2)[t] = ii - i;
        signal.row_mut(3)[t] = -(i + ii) / 2.0;
        signal.row_mut(4)[t] = i - ii / 2.0;
        signal.row_mut(5)[t] = ii - i / 2.0;
    }

    let mask = paint_mask(d, spans);
    let mut record = EcgRecord::new(format!("synth_{:05}", index), signal, fs);
    record.fold = Some((index % 10) as u8 + 1);
    record.beats = Some(BeatAnnotation::new(peaks, classes));
    record.wave_mask = Some(mask);
    record.rhythm_labels = Some(BTreeSet::from([class.name().to_string()]));
    record
}

/// Paints wave spans in onset order, keeping at least one background sample
/// between consecutive waves so runs never merge.
fn paint_mask(d: usize, mut spans: Vec<(WaveClass, usize, usize)>) -> SegmentationMask {
    spans.sort_by_key(|&(_, s, e)| (s, e));
    let mut mask = SegmentationMask::background(d);
    let mut prev_end = 0usize;
    let mut first = true;
    for (class, start, end) in spans {
        let start = if first { start } else { start.max(prev_end + 1) };
        if start >= end {
            continue;
        }
        mask.labels[start..end].fill(class as u8);
        prev_end = end;
        first = false;
    }
    mask
}

fn pick_class(mix: &[(RhythmClass, f64)], u: f64) -> RhythmClass {
    let mut acc = 0.0;
    for &(c, w) in mix {
        acc += w;
        if u < acc {
            return c;
        }
    }
    mix.iter().rev().find(|(_, w)| *w > 0.0).map(|(c, _)| *c).unwrap_or(mix[0].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_record_has_plausible_rr_grid() {
        let cfg = SynthConfig::single_class(RhythmClass::Regular, 1, 7);
        let recs = synth_generate(&cfg).unwrap();
        let r = &recs[0];
        assert_eq!(r.n_samples(), 5000);
        assert_eq!(r.n_leads(), 12);
        let peaks = &r.beats.as_ref().unwrap().r_peaks;
        assert!((10..=13).contains(&peaks.len()), "{} peaks", peaks.len());
        for w in peaks.windows(2) {
            let rr = (w[1] - w[0]) as f64 / 500.0;
            assert!((0.8 * 0.97 - 1e-9..=1.0 * 1.03 + 1e-9).contains(&rr), "rr {rr}");
        }
        r.validate().unwrap();
    }

    #[test]
    fn zero_records_rejected() {
        let cfg = SynthConfig { n_records: 0, ..SynthConfig::default() };
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn bad_mix_rejected() {
        let cfg = SynthConfig { class_mix: vec![(RhythmClass::Regular, 0.5)], ..SynthConfig::default() };
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
        let low_fs = SynthConfig { sampling_rate: 50.0, ..SynthConfig::default() };
        assert!(synth_generate(&low_fs).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig { n_records: 3, seed: 11, ..SynthConfig::default() };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate_with(&cfg, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a[0].signal, c[0].signal);
    }

    #[test]
    fn every_class_produces_valid_records() {
        for class in RhythmClass::ALL {
            let recs = synth_generate(&SynthConfig::single_class(class, 4, 3)).unwrap();
            for r in &recs {
                r.validate().unwrap();
                assert!(r.signal.is_finite());
                let labels = r.rhythm_labels.as_ref().unwrap();
                assert!(labels.contains(class.name()));
            }
        }
    }

    #[test]
    fn r_peaks_sit_inside_qrs_runs() {
        let recs = synth_generate(&SynthConfig { n_records: 12, seed: 5, ..SynthConfig::default() }).unwrap();
        for r in &recs {
            let mask = r.wave_mask.as_ref().unwrap();
            for &p in &r.beats.as_ref().unwrap().r_peaks {
                assert_eq!(mask.labels[p], WaveClass::Qrs as u8, "{} peak {p}", r.record_id);
            }
        }
    }

    #[test]
    fn ectopic_records_carry_premature_beats() {
        let recs = synth_generate(&SynthConfig::single_class(RhythmClass::Ectopic, 8, 1)).unwrap();
        let n_ectopic: usize = recs
            .iter()
            .flat_map(|r| r.beats.as_ref().unwrap().classes.iter())
            .filter(|c| matches!(c, BeatClass::S | BeatClass::V))
            .count();
        assert!(n_ectopic > 0);
    }

    #[test]
    fn single_beat_and_fixed_rr() {
        let one = SynthConfig { max_beats: Some(1), ..SynthConfig::single_class(RhythmClass::Regular, 1, 2) };
        assert_eq!(synth_generate(&one).unwrap()[0].beats.as_ref().unwrap().r_peaks.len(), 1);
        let fixed = SynthConfig { fixed_rr_s: Some(1.0), ..SynthConfig::single_class(RhythmClass::Regular, 1, 2) };
        let r = &synth_generate(&fixed).unwrap()[0];
        let peaks = &r.beats.as_ref().unwrap().r_peaks;
        assert!(peaks.windows(2).all(|w| w[1] - w[0] == 500));
    }
}

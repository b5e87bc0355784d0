//! Classification/segmentation metrics and paired significance testing.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Rhythm classification by linear probing.
    Probe,
    /// Wave segmentation with a trained decoder.
    Segment,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Probe => "probe",
            Task::Segment => "segment",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "probe" => Some(Task::Probe),
            "segment" => Some(Task::Segment),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Class name used for macro averages.
pub const MACRO: &str = "macro";

/// One scored cell: per-class and macro values for every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub config_hash: String,
    pub run: usize,
    pub fold: usize,
    pub seed: u64,
    /// `(metric, class, value)`; `class` is [`MACRO`] for averages.
    pub values: Vec<(String, String, f64)>,
    /// Some metric was undefined and replaced by a placeholder.
    pub degenerate: bool,
}

impl MetricReport {
    pub fn new(task: Task, seed: u64) -> Self {
        Self { task, config_hash: String::new(), run: 0, fold: 0, seed, values: vec![], degenerate: false }
    }

    pub fn push(&mut self, metric: &str, class: &str, value: f64) {
        self.values.push((metric.to_string(), class.to_string(), value));
    }

    pub fn get(&self, metric: &str, class: &str) -> Option<f64> {
        self.values.iter().find(|(m, c, _)| m == metric && c == class).map(|v| v.2)
    }

    pub fn macro_value(&self, metric: &str) -> Option<f64> {
        self.get(metric, MACRO)
    }
}

/// Largest sample size for which the Wilcoxon p-value is exact.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

/// A metric value that may be undefined for the given input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    /// Set when the metric is undefined and `value` is a placeholder.
    pub degenerate: bool,
}

/// Midranks (1-based) of `x`.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann–Whitney rank statistic.
/// Single-class labels give 0.5 flagged as degenerate.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<Metric> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::shape(format!("{} labels", scores.len()), labels.len().to_string()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        warn!("AUROC undefined for single-class labels; reporting 0.5");
        return Ok(Metric { value: 0.5, degenerate: true });
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Metric { value: u / (n_pos * n_neg) as f64, degenerate: false })
}

/// Binary F1 from counts; 1.0 when there are no positives at all.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Per-class F1 of thresholded scores; `scores[i][c]`, `labels[i][c]`.
pub fn per_class_f1(scores: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<Vec<f64>> {
    check_matrix(scores, labels)?;
    let k = labels[0].len();
    Ok((0..k)
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (s, l) in scores.iter().zip(labels) {
                match (s[c] >= threshold, l[c]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            f1_from_counts(tp, fp, fn_)
        })
        .collect())
}

pub fn macro_f1(scores: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<f64> {
    let f = per_class_f1(scores, labels, threshold)?;
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

pub fn per_class_auroc(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<Vec<Metric>> {
    check_matrix(scores, labels)?;
    (0..labels[0].len())
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            auroc(&s, &l)
        })
        .collect()
}

pub fn macro_auroc(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<Metric> {
    let per = per_class_auroc(scores, labels)?;
    Ok(Metric {
        value: per.iter().map(|m| m.value).sum::<f64>() / per.len() as f64,
        degenerate: per.iter().any(|m| m.degenerate),
    })
}

fn check_matrix(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<()> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::shape(format!("{} rows", scores.len()), labels.len().to_string()));
    }
    let k = labels[0].len();
    if k == 0 || scores.iter().any(|r| r.len() != k) || labels.iter().any(|r| r.len() != k) {
        return Err(Error::shape(format!("{k} classes per row"), "ragged rows".to_string()));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)` for the samples labelled `class`; 1.0 when both are empty.
pub fn dice(pred: &[u8], truth: &[u8], class: u8) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} samples", truth.len()), pred.len().to_string()));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p == class, t == class);
        inter += (p && t) as usize;
        a += p as usize;
        b += t as usize;
    }
    Ok(if a + b == 0 { 1.0 } else { 2.0 * inter as f64 / (a + b) as f64 })
}

/// Sample-wise F1 for one class.
pub fn segment_f1(pred: &[u8], truth: &[u8], class: u8) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} samples", truth.len()), pred.len().to_string()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
    /// All differences were zero.
    pub degenerate: bool,
}

/// Two-sided Wilcoxon signed-rank test on `a[i] - b[i]`.
///
/// Zero differences are dropped and tied magnitudes get midranks. Up to
/// [`EXACT_WILCOXON_MAX_N`] nonzero differences the null distribution is
/// computed exactly (subset-sum counts over doubled ranks, which are
/// integers); beyond it a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} paired scores", a.len()), b.len().to_string()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        warn!("all paired differences are zero; reporting p = 1");
        return Ok(WilcoxonResult { w_plus: 0.0, n: 0, p_value: 1.0, exact: true, degenerate: true });
    }
    let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();

    if n <= EXACT_WILCOXON_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        // counts[s] = number of sign patterns whose doubled W+ equals s
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let obs = (2.0 * w_plus).round() as usize;
        let denom = (1u64 << n) as f64;
        let lower: u64 = counts[..=obs].iter().sum();
        let upper: u64 = counts[obs..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / denom).min(1.0);
        return Ok(WilcoxonResult { w_plus, n, p_value: p, exact: true, degenerate: false });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let diff = (w_plus - mean).abs();
    let z = (diff - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(WilcoxonResult { w_plus, n, p_value: p, exact: false, degenerate: false })
}

/// Exact two-sided p by enumerating all `2^n` sign patterns; for cross-checks.
pub fn wilcoxon_enumeration(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    assert!(n <= 20, "enumeration limited to 20 differences");
    let ranks = midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let obs: f64 = ranks.iter().zip(&d).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= obs + 1e-9 {
            le += 1;
        }
        if w >= obs - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

/// `min(1, m · p)` for every p.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() {
        return Err(Error::Config(format!("comparison count {m} below number of p-values {}", p_values.len())));
    }
    Ok(p_values.iter().map(|&p| (p * m as f64).min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        let m = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(m.value, 0.75);
        assert_eq!(auroc(&[0.0, 1.0], &[false, true]).unwrap().value, 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[false, true]).unwrap().value, 0.5);
        let d = auroc(&[0.2, 0.9], &[true, true]).unwrap();
        assert!(d.degenerate && d.value == 0.5);
    }

    #[test]
    fn f1_and_dice() {
        let s = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let l = vec![vec![true, false], vec![false, true]];
        assert_eq!(macro_f1(&s, &l, 0.5).unwrap(), 1.0);
        assert_eq!(macro_auroc(&s, &l).unwrap().value, 1.0);
        let truth = [0u8, 1, 1, 0, 2];
        assert_eq!(dice(&truth, &truth, 1).unwrap(), 1.0);
        assert_eq!(dice(&[0; 5], &truth, 1).unwrap(), 0.0);
        assert_eq!(dice(&[0, 1, 0, 0, 2], &truth, 1).unwrap(), dice(&truth, &[0, 1, 0, 0, 2], 1).unwrap());
        assert_eq!(segment_f1(&[0, 1, 0, 0, 2], &truth, 1).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn wilcoxon_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(wilcoxon_signed_rank(&b, &a).unwrap().p_value, 0.0625);
        let same = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(same.degenerate && same.p_value == 1.0);
    }

    #[test]
    fn wilcoxon_ties_match_enumeration() {
        let a = [1.0, 1.0, -1.0, 2.0, 2.0, 3.0, -0.5];
        let b = [0.0; 7];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!((r.p_value - wilcoxon_enumeration(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_normal_branch() {
        let a: Vec<f64> = (1..=40).map(|i| i as f64 * 0.1).collect();
        let b = vec![0.0; 40];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact && r.p_value < 1e-6);
        let mixed: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        assert!(wilcoxon_signed_rank(&mixed, &b).unwrap().p_value > 0.5);
    }

    #[test]
    fn bonferroni_examples() {
        let adj = bonferroni(&[0.01, 0.2], 3).unwrap();
        assert!((adj[0] - 0.03).abs() < 1e-15 && (adj[1] - 0.6).abs() < 1e-15);
        assert_eq!(bonferroni(&[0.5], 4).unwrap(), vec![1.0]);
        assert_eq!(bonferroni(&[0.3, 0.7], 2).unwrap()[1], 1.0);
        assert_eq!(bonferroni(&[0.3], 1).unwrap(), vec![0.3]);
        assert!(bonferroni(&[0.1, 0.2], 1).is_err());
    }
}

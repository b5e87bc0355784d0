//! Contrastive target matrices `w[i][k]`.
//!
//! Rhythm-level matrices use the `[view 1; view 2]` layout: row `i` and row
//! `i + n` are the two augmented views of record `i`. Every builder keeps the
//! raw weights and a row-normalised copy; rows without positives stay zero.

use serde::{Deserialize, Serialize};

use crate::data::BeatClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Hard,
    #[serde(rename = "soft_1")]
    Soft1,
    #[serde(rename = "soft_2")]
    Soft2,
    BeatHard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub size: usize,
    /// Row-normalised weights, row-major `size × size`.
    pub weights: Vec<f64>,
    /// Weights before row normalisation.
    pub raw: Vec<f64>,
    pub mode: TargetMode,
    pub exponent: f64,
}

impl TargetMatrix {
    fn from_raw(size: usize, raw: Vec<f64>, mode: TargetMode, exponent: f64) -> Self {
        let weights = normalize_rows(&raw, size);
        Self { size, weights, raw, mode, exponent }
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.weights[i * self.size + k]
    }

    pub fn raw_at(&self, i: usize, k: usize) -> f64 {
        self.raw[i * self.size + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.size..(i + 1) * self.size]
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.size..(i + 1) * self.size]
    }

    /// Rows with no positive weight; these are left out of the loss.
    pub fn is_masked(&self, i: usize) -> bool {
        self.row(i).iter().all(|&w| w == 0.0)
    }

    pub fn n_active_rows(&self) -> usize {
        (0..self.size).filter(|&i| !self.is_masked(i)).count()
    }

    /// Shannon entropy (nats) of normalised row `i`.
    pub fn row_entropy(&self, i: usize) -> f64 {
        self.row(i).iter().filter(|&&w| w > 0.0).map(|&w| -w * w.ln()).sum()
    }

    /// Checks range, zero diagonal, symmetry of the raw matrix and row sums.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.size;
        if self.raw.len() != s * s || self.weights.len() != s * s {
            return Err(Error::shape(format!("{s}x{s}"), format!("{} entries", self.raw.len())));
        }
        for i in 0..s {
            if self.raw_at(i, i) != 0.0 {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for k in 0..s {
                let w = self.raw_at(i, k);
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Validation(format!("weight {w} at ({i},{k}) outside [0,1]")));
                }
                if (w - self.raw_at(k, i)).abs() > tol {
                    return Err(Error::Validation(format!("asymmetric at ({i},{k})")));
                }
            }
            let sum: f64 = self.row(i).iter().sum();
            if !self.is_masked(i) && (sum - 1.0).abs() > tol {
                return Err(Error::Validation(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Scales every row with a positive entry to sum to one.
pub fn normalize_rows(raw: &[f64], size: usize) -> Vec<f64> {
    let mut out = raw.to_vec();
    for row in out.chunks_mut(size) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for w in row {
                *w /= sum;
            }
        }
    }
    out
}

pub fn hard_targets(n: usize) -> Result<TargetMatrix> {
    if n == 0 {
        return Err(Error::Config("hard targets need at least one record".into()));
    }
    let s = 2 * n;
    let mut raw = vec![0.0; s * s];
    for i in 0..n {
        raw[i * s + i + n] = 1.0;
        raw[(i + n) * s + i] = 1.0;
    }
    Ok(TargetMatrix::from_raw(s, raw, TargetMode::Hard, 1.0))
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let f = features.first().map_or(0, Vec::len);
    if features.is_empty() {
        return Err(Error::Config("empty feature set".into()));
    }
    if f < 2 {
        return Err(Error::Config(format!("need at least 2 features per row, got {f}")));
    }
    for (row, v) in features.iter().enumerate() {
        if v.len() != f {
            return Err(Error::shape(format!("{f} features"), format!("{} in row {row}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateFeature { row });
        }
    }
    Ok(f)
}

/// Tiles an `n × n` block to `2n × 2n`; twin entries get `twin`.
fn tile(block: &[f64], n: usize, twin: f64) -> Vec<f64> {
    let s = 2 * n;
    let mut raw = vec![0.0; s * s];
    for i in 0..s {
        for k in 0..s {
            if i == k {
                continue;
            }
            let (a, b) = (i % n, k % n);
            raw[i * s + k] = if a == b { twin } else { block[a * n + b] };
        }
    }
    raw
}

/// Cosine-similarity targets: `clamp(cos, 0, 1)^p` on the feature set
/// concatenated with itself.
pub fn soft1_targets(features: &[Vec<f64>], exponent: f64) -> Result<TargetMatrix> {
    check_features(features)?;
    if !(exponent >= 1.0 && exponent.is_finite()) {
        return Err(Error::Config(format!("exponent must be >= 1, got {exponent}")));
    }
    let n = features.len();
    let norms: Vec<f64> = features.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(row) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::DegenerateFeature { row });
    }
    let mut block = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let dot: f64 = features[a].iter().zip(&features[b]).map(|(x, y)| x * y).sum();
            let c = (dot / (norms[a] * norms[b])).clamp(0.0, 1.0).powf(exponent);
            block[a * n + b] = c;
            block[b * n + a] = c;
        }
    }
    Ok(TargetMatrix::from_raw(2 * n, tile(&block, n, 1.0), TargetMode::Soft1, exponent))
}

/// Rank weights of the `k` nearest neighbours of every row under the
/// `p_norm` distance; `n × n`, not symmetric. Ties go to the lower index.
pub fn soft2_neighbour_block(features: &[Vec<f64>], k: usize, p_norm: f64) -> Result<Vec<f64>> {
    check_features(features)?;
    let n = features.len();
    if k == 0 || k >= n {
        return Err(Error::Config(format!("soft_2 needs 1 <= k < N, got k = {k}, N = {n}")));
    }
    if !(p_norm >= 1.0) {
        return Err(Error::Config(format!("p-norm order must be >= 1, got {p_norm}")));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        if p_norm.is_infinite() {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        } else {
            a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p_norm)).sum::<f64>().powf(1.0 / p_norm)
        }
    };
    let mut block = vec![0.0; n * n];
    for a in 0..n {
        let mut order: Vec<(f64, usize)> =
            (0..n).filter(|&b| b != a).map(|b| (dist(&features[a], &features[b]), b)).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (j, &(_, b)) in order.iter().take(k).enumerate() {
            block[a * n + b] = (k - j) as f64 / k as f64;
        }
    }
    Ok(block)
}

/// Top-`k` neighbour targets, tiled to `2n`, twin weight 1, symmetrised by max.
pub fn soft2_targets(features: &[Vec<f64>], k: usize, p_norm: f64) -> Result<TargetMatrix> {
    let n = features.len();
    let block = soft2_neighbour_block(features, k, p_norm)?;
    let mut raw = tile(&block, n, 1.0);
    let s = 2 * n;
    for i in 0..s {
        for j in i + 1..s {
            let m = raw[i * s + j].max(raw[j * s + i]);
            raw[i * s + j] = m;
            raw[j * s + i] = m;
        }
    }
    Ok(TargetMatrix::from_raw(s, raw, TargetMode::Soft2, 1.0))
}

/// Positives are beats sharing a (pseudo-)label.
pub fn beat_hard_targets(classes: &[BeatClass]) -> Result<TargetMatrix> {
    let m = classes.len();
    if m < 2 {
        return Err(Error::Config(format!("beat targets need at least 2 beats, got {m}")));
    }
    let mut raw = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i != j && classes[i] == classes[j] {
                raw[i * m + j] = 1.0;
            }
        }
    }
    Ok(TargetMatrix::from_raw(m, raw, TargetMode::BeatHard, 1.0))
}

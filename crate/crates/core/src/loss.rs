//! Weighted NT-Xent.
//!
//! For anchor row `i` with target weights `w[i][k]`:
//!
//! ```text
//! l_i = -Σ_{k≠i} w[i][k] · log( exp(s_ik/τ) / Σ_{m≠i} exp(s_im/τ) ),   s = cosine similarity
//! ```
//!
//! The batch loss is the mean of `l_i` over rows whose targets are not all zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::PROJECTION_DIM;
use crate::targets::TargetMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Rhythm,
    Beat,
}

/// `S × 128` projection outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBatch {
    pub z: Vec<Vec<f64>>,
    pub context: Context,
}

impl ProjectionBatch {
    pub fn new(z: Vec<Vec<f64>>, context: Context) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Validation(format!("projection batch needs at least 2 rows, got {}", z.len())));
        }
        for (row, v) in z.iter().enumerate() {
            if v.len() != PROJECTION_DIM {
                return Err(Error::shape(format!("{PROJECTION_DIM} columns"), format!("{} in row {row}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("non-finite projection in row {row}")));
            }
        }
        Ok(Self { z, context })
    }

    pub fn from_f32(z: &[Vec<f32>], context: Context) -> Result<Self> {
        Self::new(z.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect(), context)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_beat: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.1, lambda_beat: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda_beat >= 0.0 && self.lambda_beat.is_finite()) {
            return Err(Error::Config(format!("lambda_beat must be >= 0, got {}", self.lambda_beat)));
        }
        Ok(())
    }
}

fn check(batch: &ProjectionBatch, targets: &TargetMatrix, tau: f64) -> Result<()> {
    if targets.size != batch.len() {
        return Err(Error::shape(format!("{} target rows", batch.len()), targets.size.to_string()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Row-normalised embeddings and the original norms.
fn unit_rows(z: &[Vec<f64>]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (s, d) = (z.len(), z[0].len());
    let mut u = DMatrix::from_fn(s, d, |i, j| z[i][j]);
    let mut norms = Vec::with_capacity(s);
    for (i, mut row) in u.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        row /= n;
        norms.push(n);
    }
    Ok((u, norms))
}

pub fn ntxent(batch: &ProjectionBatch, targets: &TargetMatrix, tau: f64) -> Result<f64> {
    ntxent_with_grad(batch, targets, tau).map(|(l, _)| l)
}

/// Loss and `∂loss/∂z` (same shape as `batch.z`).
pub fn ntxent_with_grad(batch: &ProjectionBatch, targets: &TargetMatrix, tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    check(batch, targets, tau)?;
    let s = batch.len();
    let (u, norms) = unit_rows(&batch.z)?;
    let logits = (&u * u.transpose()) / tau;
    let w = DMatrix::from_row_slice(s, s, &targets.weights);

    let active: Vec<usize> = (0..s).filter(|&i| !targets.is_masked(i)).collect();
    let d = batch.z[0].len();
    if active.is_empty() {
        return Ok((0.0, vec![vec![0.0; d]; s]));
    }
    let r = active.len() as f64;

    // g[i][k] = ∂loss/∂s_ik
    let mut g = DMatrix::<f64>::zeros(s, s);
    let mut total = 0.0;
    for &i in &active {
        let row = logits.row(i);
        let max = (0..s).filter(|&m| m != i).map(|m| row[m]).fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = (0..s).filter(|&m| m != i).map(|m| (row[m] - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let w_i: f64 = (0..s).filter(|&k| k != i).map(|k| w[(i, k)]).sum();
        for k in (0..s).filter(|&k| k != i) {
            total -= w[(i, k)] * (row[k] - lse);
            let p = (row[k] - lse).exp();
            g[(i, k)] = (w_i * p - w[(i, k)]) / (r * tau);
        }
    }
    let loss = total / r;

    // ∂/∂u_i = Σ_k (g_ik + g_ki) u_k, then through the normalisation.
    let du = (&g + g.transpose()) * &u;
    let grad = (0..s)
        .map(|i| {
            let ui = u.row(i);
            let dui = du.row(i);
            let proj = ui.dot(&dui);
            (0..d).map(|j| (dui[j] - ui[j] * proj) / norms[i]).collect()
        })
        .collect();
    Ok((loss, grad))
}

/// Direct double-loop evaluation of the same loss, for cross-checking.
pub fn ntxent_oracle(z: &[Vec<f64>], targets: &TargetMatrix, tau: f64) -> Result<f64> {
    let s = z.len();
    if targets.size != s {
        return Err(Error::shape(format!("{s} target rows"), targets.size.to_string()));
    }
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for j in 0..a.len() {
            dot += a[j] * b[j];
            na += a[j] * a[j];
            nb += b[j] * b[j];
        }
        dot / (na.sqrt() * nb.sqrt())
    };
    for (row, v) in z.iter().enumerate() {
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateEmbedding { row });
        }
    }
    let mut total = 0.0;
    let mut rows = 0usize;
    for i in 0..s {
        let mut any = false;
        for k in 0..s {
            if targets.get(i, k) != 0.0 {
                any = true;
            }
        }
        if !any {
            continue;
        }
        rows += 1;
        let mut denom = 0.0;
        for m in 0..s {
            if m != i {
                denom += (cos(&z[i], &z[m]) / tau).exp();
            }
        }
        let mut li = 0.0;
        for k in 0..s {
            if k != i {
                let num = (cos(&z[i], &z[k]) / tau).exp();
                li -= targets.get(i, k) * (num / denom).ln();
            }
        }
        total += li;
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

/// `rhythm + λ · beat`; the beat term is absent when beat contrasting is off.
pub fn total_pretrain_loss(rhythm: f64, beat: Option<f64>, config: &LossConfig) -> f64 {
    match beat {
        Some(b) => rhythm + config.lambda_beat * b,
        None => rhythm,
    }
}

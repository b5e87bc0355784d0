use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Linear, ParamStore};
use crate::error::{Error, Result};

pub const PROJECTION_DIM: usize = 128;

const BN_EPS: f64 = 1e-5;

/// Two-layer perceptron `fc2(relu(bn(fc1(x))))` applied to a whole batch.
/// `bn` standardises every hidden unit with batch statistics, followed by a
/// learnable affine map; it is omitted when built with `batch_norm = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: ParamStore,
    fc1: Linear,
    fc2: Linear,
    /// Offsets of `gamma` and `beta`.
    bn: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Vec<Vec<f32>>,
    /// Normalised pre-activations (or raw ones without batch norm).
    hhat: Vec<Vec<f32>>,
    h: Vec<Vec<f32>>,
    inv_std: Vec<f32>,
}

impl Mlp {
    pub fn new<R: Rng>(n_in: usize, hidden: usize, n_out: usize, batch_norm: bool, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let fc1 = Linear::new(&mut params, "fc1", n_in, hidden, rng);
        let bn = batch_norm.then(|| {
            let g = params.alloc("bn.gamma", &[hidden]);
            params.values[g..g + hidden].fill(1.0);
            (g, params.alloc("bn.beta", &[hidden]))
        });
        let fc2 = Linear::new(&mut params, "fc2", hidden, n_out, rng);
        Self { params, fc1, fc2, bn }
    }

    /// Projection head: `n_in → n_in → 128` with batch norm.
    pub fn projection<R: Rng>(n_in: usize, rng: &mut R) -> Self {
        Self::new(n_in, n_in, PROJECTION_DIM, true, rng)
    }

    pub fn projection_from_values(n_in: usize, values: Vec<f32>) -> Result<Self> {
        let mut m = Self::projection(n_in, &mut ChaCha8Rng::seed_from_u64(0));
        if values.len() != m.params.len() {
            return Err(Error::Checkpoint(format!("head expects {} parameters, got {}", m.params.len(), values.len())));
        }
        m.params.values = values;
        Ok(m)
    }

    pub fn n_in(&self) -> usize {
        self.fc1.n_in
    }

    pub fn hidden(&self) -> usize {
        self.fc1.n_out
    }

    pub fn n_out(&self) -> usize {
        self.fc2.n_out
    }

    pub fn forward(&self, xs: &[Vec<f32>]) -> (Vec<Vec<f32>>, MlpCache) {
        let p = &self.params.values;
        let hd = self.hidden();
        let mut pre: Vec<Vec<f32>> = xs.iter().map(|x| self.fc1.forward(p, x)).collect();
        let mut inv_std = vec![1.0f32; hd];
        if let Some((g, b)) = self.bn {
            let n = pre.len() as f64;
            for j in 0..hd {
                let mean = pre.iter().map(|r| r[j] as f64).sum::<f64>() / n;
                let var = pre.iter().map(|r| (r[j] as f64 - mean).powi(2)).sum::<f64>() / n;
                let is = 1.0 / (var + BN_EPS).sqrt();
                inv_std[j] = is as f32;
                for r in pre.iter_mut() {
                    r[j] = ((r[j] as f64 - mean) * is) as f32;
                }
            }
            let hhat = pre.clone();
            let h: Vec<Vec<f32>> = hhat
                .iter()
                .map(|r| r.iter().enumerate().map(|(j, &v)| (p[g + j] * v + p[b + j]).max(0.0)).collect())
                .collect();
            let y = h.iter().map(|r| self.fc2.forward(p, r)).collect();
            return (y, MlpCache { x: xs.to_vec(), hhat, h, inv_std });
        }
        let h: Vec<Vec<f32>> = pre.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
        let y = h.iter().map(|r| self.fc2.forward(p, r)).collect();
        (y, MlpCache { x: xs.to_vec(), hhat: pre, h, inv_std })
    }

    /// Parameter gradient and `dL/dx` for every batch row.
    pub fn backward(&self, cache: &MlpCache, dy: &[Vec<f32>]) -> (Vec<f32>, Vec<Vec<f32>>) {
        let p = &self.params.values;
        let mut g = self.params.zeros_like();
        let hd = self.hidden();
        let mut dpre: Vec<Vec<f32>> = cache
            .h
            .iter()
            .zip(dy)
            .map(|(h, d)| {
                let mut dh = self.fc2.backward(p, h, d, &mut g, true).expect("requested");
                for (v, &hv) in dh.iter_mut().zip(h) {
                    if hv <= 0.0 {
                        *v = 0.0;
                    }
                }
                dh
            })
            .collect();
        if let Some((gi, bi)) = self.bn {
            let n = dpre.len() as f64;
            for j in 0..hd {
                let gamma = p[gi + j];
                let (mut sd, mut sdh) = (0.0f64, 0.0f64);
                for (d, hh) in dpre.iter().zip(&cache.hhat) {
                    g[gi + j] += d[j] * hh[j];
                    g[bi + j] += d[j];
                    let dhat = (d[j] * gamma) as f64;
                    sd += dhat;
                    sdh += dhat * hh[j] as f64;
                }
                let (md, mdh) = (sd / n, sdh / n);
                for (d, hh) in dpre.iter_mut().zip(&cache.hhat) {
                    let dhat = (d[j] * gamma) as f64;
                    d[j] = (cache.inv_std[j] as f64 * (dhat - md - hh[j] as f64 * mdh)) as f32;
                }
            }
        }
        let dx = cache
            .x
            .iter()
            .zip(&dpre)
            .map(|(x, d)| self.fc1.backward(p, x, d, &mut g, true).expect("requested"))
            .collect();
        (g, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_outputs_128() {
        let m = Mlp::projection(32, &mut ChaCha8Rng::seed_from_u64(1));
        let (y, _) = m.forward(&[vec![0.5; 32], vec![-0.5; 32]]);
        assert_eq!(y.len(), 2);
        assert!(y.iter().all(|r| r.len() == PROJECTION_DIM));
        assert_eq!(m.hidden(), 32);
    }

    fn check_gradients(bn: bool) {
        let m = Mlp::new(5, 6, 3, bn, &mut ChaCha8Rng::seed_from_u64(2));
        let x: Vec<Vec<f32>> =
            (0..4).map(|b| (0..5).map(|i| ((b * 5 + i * 3) % 7) as f32 * 0.3 - 0.9).collect()).collect();
        let r: Vec<Vec<f32>> = (0..4).map(|b| (0..3).map(|i| ((b + 2 * i) % 5) as f32 * 0.4 - 0.8).collect()).collect();
        let loss = |m: &Mlp, x: &[Vec<f32>]| -> f64 {
            m.forward(x).0.iter().flatten().zip(r.iter().flatten()).map(|(a, b)| (a * b) as f64).sum()
        };
        let (_, cache) = m.forward(&x);
        let (g, dx) = m.backward(&cache, &r);
        let h = 1e-3f32;
        for i in 0..m.params.len() {
            let mut mp = m.clone();
            mp.params.values[i] += h;
            let mut mm = m.clone();
            mm.params.values[i] -= h;
            let num = (loss(&mp, &x) - loss(&mm, &x)) / (2.0 * h as f64);
            assert!((num - g[i] as f64).abs() < 5e-3, "param {i}: {num} vs {}", g[i]);
        }
        for b in 0..4 {
            for i in 0..5 {
                let mut xp = x.clone();
                xp[b][i] += h;
                let mut xm = x.clone();
                xm[b][i] -= h;
                let num = (loss(&m, &xp) - loss(&m, &xm)) / (2.0 * h as f64);
                assert!((num - dx[b][i] as f64).abs() < 5e-3, "input {b},{i}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_gradients(false);
        check_gradients(true);
    }
}

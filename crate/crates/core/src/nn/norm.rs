use super::{FeatureMap, ParamStore};

const EPS: f32 = 1e-5;

/// Per-sample normalisation over all channels and frames, followed by a
/// per-channel affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub channels: usize,
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: FeatureMap,
    inv_std: f32,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.alloc(format!("{name}.gamma"), &[channels]);
        let beta = store.alloc(format!("{name}.beta"), &[channels]);
        store.values[gamma..gamma + channels].fill(1.0);
        Self { channels, gamma, beta }
    }

    pub fn forward(&self, p: &[f32], x: &FeatureMap) -> (FeatureMap, NormCache) {
        let n = x.data.len() as f64;
        let mean = x.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = x.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv_std = (1.0 / (var + EPS as f64).sqrt()) as f32;
        let mean = mean as f32;
        let mut xhat = x.clone();
        for v in &mut xhat.data {
            *v = (*v - mean) * inv_std;
        }
        let mut y = xhat.clone();
        for c in 0..self.channels {
            let (g, b) = (p[self.gamma + c], p[self.beta + c]);
            for v in y.channel_mut(c) {
                *v = g * *v + b;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f32], cache: &NormCache, dy: &FeatureMap, g: &mut [f32]) -> FeatureMap {
        let xhat = &cache.xhat;
        let mut dxhat = dy.clone();
        for c in 0..self.channels {
            let gamma = p[self.gamma + c];
            let (mut gg, mut gb) = (0.0f32, 0.0f32);
            for (d, &h) in dxhat.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
                gg += *d * h;
                gb += *d;
                *d *= gamma;
            }
            g[self.gamma + c] += gg;
            g[self.beta + c] += gb;
        }
        let n = dxhat.data.len() as f64;
        let mean_d = dxhat.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mean_dh = dxhat.data.iter().zip(&xhat.data).map(|(&d, &h)| (d * h) as f64).sum::<f64>() / n;
        let (mean_d, mean_dh) = (mean_d as f32, mean_dh as f32);
        for (d, &h) in dxhat.data.iter_mut().zip(&xhat.data) {
            *d = cache.inv_std * (*d - mean_d - h * mean_dh);
        }
        dxhat
    }
}

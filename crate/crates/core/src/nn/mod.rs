//! Minimal f32 building blocks with hand-written backward passes: 1-D
//! convolutions, dense layers, the residual encoder, its mirrored decoder,
//! projection heads and Adam.
//!
//! Parameters of a component live in one flat [`ParamStore`]; layers are
//! descriptors holding offsets into it, so gradients are flat vectors of the
//! same layout and per-sample gradients reduce with a plain elementwise sum.

mod adam;
mod conv;
mod decoder;
mod encoder;
mod heads;
mod linear;
mod norm;
mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv1d;
pub use decoder::{argmax_labels, softmax_cross_entropy, Decoder, DecoderCache};
pub use encoder::{Encoder, EncoderCache, EncoderConfig};
pub use heads::{Mlp, MlpCache, PROJECTION_DIM};
pub use linear::Linear;
pub use norm::{LayerNorm, NormCache};
pub use params::{ParamEntry, ParamStore};

/// Channel-major `channels × frames` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self { channels, frames, data: vec![0.0; channels * frames] }
    }

    pub fn from_vec(channels: usize, frames: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * frames, "feature map size mismatch");
        Self { channels, frames, data }
    }

    pub fn from_fn(channels: usize, frames: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * frames);
        for c in 0..channels {
            for t in 0..frames {
                data.push(f(c, t));
            }
        }
        Self { channels, frames, data }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn get(&self, c: usize, t: usize) -> f32 {
        self.data[c * self.frames + t]
    }

    /// Temporal mean of every channel.
    pub fn mean_pool(&self) -> Vec<f32> {
        (0..self.channels).map(|c| self.channel(c).iter().sum::<f32>() / self.frames as f32).collect()
    }

    /// Temporal max of every channel.
    pub fn max_pool(&self) -> Vec<f32> {
        (0..self.channels).map(|c| self.channel(c).iter().cloned().fold(f32::NEG_INFINITY, f32::max)).collect()
    }

    /// Non-overlapping max-pooling along time with window `k`; a trailing
    /// partial window is pooled as well.
    pub fn max_pool_1d(&self, k: usize) -> FeatureMap {
        let out_len = self.frames.div_ceil(k);
        FeatureMap::from_fn(self.channels, out_len, |c, t| {
            let row = self.channel(c);
            row[t * k..((t + 1) * k).min(self.frames)].iter().cloned().fold(f32::NEG_INFINITY, f32::max)
        })
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `dy` masked by the positive part of a ReLU output.
pub(crate) fn relu_backward(out: &FeatureMap, dy: &mut FeatureMap) {
    for (g, &y) in dy.data.iter_mut().zip(&out.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

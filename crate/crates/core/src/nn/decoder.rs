use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoder::{BlockCache, ResBlock};
use super::{Conv1d, EncoderConfig, FeatureMap, ParamStore};
use crate::data::N_WAVE_CLASSES;
use crate::error::{Error, Result};

/// Mirror of [`super::Encoder`]: per stage, nearest-neighbour ×2 upsampling
/// then a residual block, deepest stage first; a 1×1 convolution produces
/// per-sample class logits.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub params: ParamStore,
    blocks: Vec<ResBlock>,
    head: Conv1d,
    in_channels: usize,
    n_classes: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    inputs: Vec<FeatureMap>,
    blocks: Vec<BlockCache>,
    full_len: usize,
    out_len: usize,
}

fn upsample2(x: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(x.channels, x.frames * 2, |c, t| x.get(c, t / 2))
}

fn upsample2_backward(dy: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(dy.channels, dy.frames / 2, |c, t| dy.get(c, 2 * t) + dy.get(c, 2 * t + 1))
}

impl Decoder {
    pub fn new<R: Rng>(enc: &EncoderConfig, rng: &mut R) -> Result<Self> {
        enc.validate()?;
        let mut params = ParamStore::new();
        let ch = &enc.channels;
        let mut blocks = Vec::with_capacity(ch.len());
        let mut c_in = enc.out_channels();
        for i in (0..ch.len()).rev() {
            let c_out = if i > 0 { ch[i - 1] } else { ch[0] };
            blocks.push(ResBlock::new(
                &mut params,
                &format!("up{i}"),
                c_in,
                c_out,
                enc.kernel,
                enc.inner_kernel,
                1,
                enc.norm,
                rng,
            ));
            c_in = c_out;
        }
        let head = Conv1d::new(&mut params, "head", c_in, N_WAVE_CLASSES, 1, 1, rng);
        Ok(Self { params, blocks, head, in_channels: enc.out_channels(), n_classes: N_WAVE_CLASSES })
    }

    pub fn from_values(enc: &EncoderConfig, values: Vec<f32>) -> Result<Self> {
        let mut d = Self::new(enc, &mut ChaCha8Rng::seed_from_u64(0))?;
        if values.len() != d.params.len() {
            return Err(Error::Checkpoint(format!("decoder expects {} parameters, got {}", d.params.len(), values.len())));
        }
        d.params.values = values;
        Ok(d)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Logits of shape `n_classes × out_len`, cropped from the upsampled length.
    pub fn forward(&self, z: &FeatureMap, out_len: usize) -> Result<(FeatureMap, DecoderCache)> {
        if z.channels != self.in_channels {
            return Err(Error::shape(format!("{} channels", self.in_channels), z.channels.to_string()));
        }
        let full_len = z.frames << self.blocks.len();
        if out_len > full_len {
            return Err(Error::shape(format!("output length <= {full_len}"), out_len.to_string()));
        }
        let p = &self.params.values;
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut caches: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        let mut cur = z.clone();
        for b in &self.blocks {
            let up = upsample2(&cur);
            let c = b.forward(p, &up);
            cur = c.out_ref().clone();
            inputs.push(up);
            caches.push(c);
        }
        let full = self.head.forward(p, &cur);
        let logits = FeatureMap::from_fn(self.n_classes, out_len, |c, t| full.get(c, t));
        Ok((logits, DecoderCache { inputs, blocks: caches, full_len, out_len }))
    }

    /// Parameter gradient given `dL/dlogits` (cropped shape).
    pub fn backward(&self, cache: &DecoderCache, dlogits: &FeatureMap) -> Vec<f32> {
        let p = &self.params.values;
        let mut g = self.params.zeros_like();
        let dfull = FeatureMap::from_fn(self.n_classes, cache.full_len, |c, t| {
            if t < cache.out_len { dlogits.get(c, t) } else { 0.0 }
        });
        let last = cache.blocks.last().expect("at least one stage").out_ref();
        let mut d = self.head.backward(p, last, &dfull, &mut g, true).expect("requested");
        for i in (0..self.blocks.len()).rev() {
            let dx = self.blocks[i].backward(p, &cache.inputs[i], &cache.blocks[i], d, &mut g, i > 0);
            match dx {
                Some(dx) => d = upsample2_backward(&dx),
                None => break,
            }
        }
        g
    }
}

/// Mean softmax cross-entropy over samples and its gradient w.r.t. logits.
pub fn softmax_cross_entropy(logits: &FeatureMap, labels: &[u8]) -> (f64, FeatureMap) {
    let (k, n) = (logits.channels, logits.frames);
    let mut grad = FeatureMap::zeros(k, n);
    let mut loss = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for t in 0..n {
        let m = (0..k).map(|c| logits.get(c, t)).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut z = 0.0;
        for (c, pr) in probs.iter_mut().enumerate() {
            *pr = (logits.get(c, t) as f64 - m).exp();
            z += *pr;
        }
        let y = labels[t] as usize;
        loss -= (probs[y] / z).ln();
        for (c, pr) in probs.iter().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            grad.data[c * n + t] = ((pr / z - target) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}

/// Per-sample arg-max class.
pub fn argmax_labels(logits: &FeatureMap) -> Vec<u8> {
    (0..logits.frames)
        .map(|t| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.get(c, t) > logits.get(best, t) {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

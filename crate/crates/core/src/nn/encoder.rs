use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{relu_backward, Conv1d, FeatureMap, LayerNorm, NormCache, ParamStore};
use crate::data::{Signal, N_LEADS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_leads: usize,
    /// Output width of every stage; each stage halves the time axis.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub inner_kernel: usize,
    /// Layer normalisation after each convolution of a residual block.
    pub norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { in_leads: N_LEADS, channels: vec![64, 128, 256, 256], kernel: 7, inner_kernel: 3, norm: false }
    }
}

impl EncoderConfig {
    /// Narrow variant for quick CPU runs.
    pub fn small() -> Self {
        Self { channels: vec![16, 32, 32, 64], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_leads == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("encoder needs at least one stage and nonzero widths".into()));
        }
        if self.kernel.is_multiple_of(2) || self.inner_kernel.is_multiple_of(2) {
            return Err(Error::Config("encoder kernels must be odd".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.channels.len()
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.stride())
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated config has stages")
    }
}

/// `relu(norm_b(conv_b(relu(norm_a(conv_a(x))))) + skip(x))`; the norms are optional.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ResBlock {
    conv_a: Conv1d,
    conv_b: Conv1d,
    skip: Conv1d,
    norm_a: Option<LayerNorm>,
    norm_b: Option<LayerNorm>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    mid: FeatureMap,
    out: FeatureMap,
    norm_a: Option<NormCache>,
    norm_b: Option<NormCache>,
}

impl BlockCache {
    pub(crate) fn out_ref(&self) -> &FeatureMap {
        &self.out
    }
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        inner_kernel: usize,
        stride: usize,
        norm: bool,
        rng: &mut R,
    ) -> Self {
        let conv_a = Conv1d::new(store, &format!("{name}.conv_a"), c_in, c_out, kernel, stride, rng);
        let norm_a = norm.then(|| LayerNorm::new(store, &format!("{name}.norm_a"), c_out));
        let conv_b = Conv1d::new(store, &format!("{name}.conv_b"), c_out, c_out, inner_kernel, 1, rng);
        let norm_b = norm.then(|| LayerNorm::new(store, &format!("{name}.norm_b"), c_out));
        let skip = Conv1d::new(store, &format!("{name}.skip"), c_in, c_out, 1, stride, rng);
        Self { conv_a, conv_b, skip, norm_a, norm_b }
    }

    pub(crate) fn forward(&self, p: &[f32], x: &FeatureMap) -> BlockCache {
        let mut mid = self.conv_a.forward(p, x);
        let norm_a = self.norm_a.map(|n| {
            let (y, c) = n.forward(p, &mid);
            mid = y;
            c
        });
        mid.relu_in_place();
        let mut out = self.conv_b.forward(p, &mid);
        let norm_b = self.norm_b.map(|n| {
            let (y, c) = n.forward(p, &out);
            out = y;
            c
        });
        let s = self.skip.forward(p, x);
        for (o, v) in out.data.iter_mut().zip(&s.data) {
            *o += v;
        }
        out.relu_in_place();
        BlockCache { mid, out, norm_a, norm_b }
    }

    pub(crate) fn backward(
        &self,
        p: &[f32],
        x: &FeatureMap,
        cache: &BlockCache,
        mut dy: FeatureMap,
        g: &mut [f32],
        need_dx: bool,
    ) -> Option<FeatureMap> {
        relu_backward(&cache.out, &mut dy);
        let dpre_b = match (self.norm_b, &cache.norm_b) {
            (Some(n), Some(c)) => n.backward(p, c, &dy, g),
            _ => dy.clone(),
        };
        let mut dmid = self.conv_b.backward(p, &cache.mid, &dpre_b, g, true).expect("requested");
        relu_backward(&cache.mid, &mut dmid);
        if let (Some(n), Some(c)) = (self.norm_a, &cache.norm_a) {
            dmid = n.backward(p, c, &dmid, g);
        }
        let dx_a = self.conv_a.backward(p, x, &dmid, g, need_dx);
        let dx_s = self.skip.backward(p, x, &dy, g, need_dx);
        match (dx_a, dx_s) {
            (Some(mut a), Some(b)) => {
                for (u, v) in a.data.iter_mut().zip(&b.data) {
                    *u += v;
                }
                Some(a)
            }
            _ => None,
        }
    }
}

/// Residual 1-D CNN mapping a `leads × D` signal to `C × ceil(D / stride)`.
///
/// Every forward pass bumps an invocation counter, used to check how often a
/// training step touches the encoder.
#[derive(Debug)]
pub struct Encoder {
    config: EncoderConfig,
    pub params: ParamStore,
    blocks: Vec<ResBlock>,
    invocations: AtomicUsize,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            blocks: self.blocks.clone(),
            invocations: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: FeatureMap,
    blocks: Vec<BlockCache>,
}

impl EncoderCache {
    pub fn output(&self) -> &FeatureMap {
        &self.blocks.last().expect("at least one stage").out
    }
}

impl Encoder {
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_leads;
        for (i, &c) in config.channels.iter().enumerate() {
            blocks.push(ResBlock::new(
                &mut params,
                &format!("stage{i}"),
                c_in,
                c,
                config.kernel,
                config.inner_kernel,
                2,
                config.norm,
                rng,
            ));
            c_in = c;
        }
        Ok(Self { config, params, blocks, invocations: AtomicUsize::new(0) })
    }

    /// Rebuilds the layer layout for `config` and loads `values` into it.
    pub fn from_values(config: EncoderConfig, values: Vec<f32>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Self::new(config, &mut rng)?;
        if values.len() != enc.params.len() {
            return Err(Error::Checkpoint(format!(
                "encoder expects {} parameters, got {}",
                enc.params.len(),
                values.len()
            )));
        }
        enc.params.values = values;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn stride(&self) -> usize {
        self.config.stride()
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        self.config.n_frames(n_samples)
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::Relaxed)
    }

    pub fn reset_invocations(&self) {
        self.invocations.store(0, Ordering::Relaxed);
    }

    pub fn forward(&self, x: FeatureMap) -> Result<(FeatureMap, EncoderCache)> {
        if x.channels != self.config.in_leads {
            return Err(Error::shape(format!("{} input channels", self.config.in_leads), format!("{}", x.channels)));
        }
        if x.frames == 0 {
            return Err(Error::Validation("empty signal".into()));
        }
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let p = &self.params.values;
        let mut caches: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let inp = caches.last().map_or(&x, |c| &c.out);
            let c = b.forward(p, inp);
            caches.push(c);
        }
        let cache = EncoderCache { input: x, blocks: caches };
        Ok((cache.output().clone(), cache))
    }

    pub fn forward_signal(&self, signal: &Signal) -> Result<(FeatureMap, EncoderCache)> {
        self.forward(FeatureMap::from_vec(signal.rows(), signal.samples(), signal.to_f32()))
    }

    /// Forward pass without keeping activations for backward.
    pub fn encode(&self, signal: &Signal) -> Result<FeatureMap> {
        self.forward_signal(signal).map(|(y, _)| y)
    }

    /// Parameter gradient for upstream gradient `dy` on the output.
    pub fn backward(&self, cache: &EncoderCache, dy: FeatureMap) -> Vec<f32> {
        let p = &self.params.values;
        let mut g = self.params.zeros_like();
        let mut d = dy;
        for i in (0..self.blocks.len()).rev() {
            let inp = if i == 0 { &cache.input } else { &cache.blocks[i - 1].out };
            match self.blocks[i].backward(p, inp, &cache.blocks[i], d, &mut g, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        g
    }
}

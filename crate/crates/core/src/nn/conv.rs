use rand::Rng;

use super::{FeatureMap, ParamStore};

/// 1-D convolution with "same"-style padding `kernel / 2`, so the output has
/// `ceil(len / stride)` frames for odd kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    w: usize,
    b: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.alloc(format!("{name}.weight"), &[out_ch, in_ch, kernel]);
        let b = store.alloc(format!("{name}.bias"), &[out_ch]);
        store.init_he(w, out_ch * in_ch * kernel, in_ch * kernel, rng);
        Self { in_ch, out_ch, kernel, stride, pad: kernel / 2, w, b }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output frames `t` for which input index `t*stride + k - pad` is in `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let t0 = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        let t1 = if len + self.pad > k { ((len - 1 + self.pad - k) / s + 1).min(out_len) } else { 0 };
        (t0, t1.max(t0))
    }

    pub fn forward(&self, p: &[f32], x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels, self.in_ch);
        let len = x.frames;
        let out_len = self.out_len(len);
        let mut y = FeatureMap::zeros(self.out_ch, out_len);
        let s = self.stride;
        for o in 0..self.out_ch {
            let yo = y.channel_mut(o);
            yo.fill(p[self.b + o]);
            for i in 0..self.in_ch {
                let xi = x.channel(i);
                let wrow = &p[self.w + (o * self.in_ch + i) * self.kernel..][..self.kernel];
                for (k, &w) in wrow.iter().enumerate() {
                    let (t0, t1) = self.valid_range(k, len, out_len);
                    if t0 >= t1 {
                        continue;
                    }
                    let base = t0 * s + k - self.pad;
                    if s == 1 {
                        let src = &xi[base..base + (t1 - t0)];
                        for (yv, &xv) in yo[t0..t1].iter_mut().zip(src) {
                            *yv += w * xv;
                        }
                    } else {
                        for (j, yv) in yo[t0..t1].iter_mut().enumerate() {
                            *yv += w * xi[base + j * s];
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx` when asked.
    pub fn backward(&self, p: &[f32], x: &FeatureMap, dy: &FeatureMap, g: &mut [f32], need_dx: bool) -> Option<FeatureMap> {
        let len = x.frames;
        let out_len = dy.frames;
        let s = self.stride;
        let mut dx = need_dx.then(|| FeatureMap::zeros(self.in_ch, len));
        for o in 0..self.out_ch {
            let dyo = dy.channel(o);
            g[self.b + o] += dyo.iter().sum::<f32>();
            for i in 0..self.in_ch {
                let xi = x.channel(i);
                let widx = self.w + (o * self.in_ch + i) * self.kernel;
                for k in 0..self.kernel {
                    let (t0, t1) = self.valid_range(k, len, out_len);
                    if t0 >= t1 {
                        continue;
                    }
                    let base = t0 * s + k - self.pad;
                    let mut acc = 0.0f32;
                    if s == 1 {
                        for (&d, &xv) in dyo[t0..t1].iter().zip(&xi[base..base + (t1 - t0)]) {
                            acc += d * xv;
                        }
                    } else {
                        for (j, &d) in dyo[t0..t1].iter().enumerate() {
                            acc += d * xi[base + j * s];
                        }
                    }
                    g[widx + k] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let w = p[widx + k];
                        let dxi = dx.channel_mut(i);
                        if s == 1 {
                            for (dv, &d) in dxi[base..base + (t1 - t0)].iter_mut().zip(&dyo[t0..t1]) {
                                *dv += w * d;
                            }
                        } else {
                            for (j, &d) in dyo[t0..t1].iter().enumerate() {
                                dxi[base + j * s] += w * d;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

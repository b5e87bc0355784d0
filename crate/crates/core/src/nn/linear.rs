use rand::Rng;

use super::ParamStore;

/// Dense layer `y = W x + b`, `W` stored `[out][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let w = store.alloc(format!("{name}.weight"), &[n_out, n_in]);
        let b = store.alloc(format!("{name}.bias"), &[n_out]);
        store.init_he(w, n_out * n_in, n_in, rng);
        Self { n_in, n_out, w, b }
    }

    /// Same layout, zero weights.
    pub fn new_zeroed(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = store.alloc(format!("{name}.weight"), &[n_out, n_in]);
        let b = store.alloc(format!("{name}.bias"), &[n_out]);
        Self { n_in, n_out, w, b }
    }

    pub fn forward(&self, p: &[f32], x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|o| {
                let row = &p[self.w + o * self.n_in..][..self.n_in];
                p[self.b + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>()
            })
            .collect()
    }

    /// Accumulates into `g`; returns `dL/dx`.
    pub fn backward(&self, p: &[f32], x: &[f32], dy: &[f32], g: &mut [f32], need_dx: bool) -> Option<Vec<f32>> {
        let mut dx = need_dx.then(|| vec![0.0f32; self.n_in]);
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let gw = &mut g[self.w + o * self.n_in..][..self.n_in];
            for (gv, &xv) in gw.iter_mut().zip(x) {
                *gv += d * xv;
            }
            if let Some(dx) = dx.as_mut() {
                let row = &p[self.w + o * self.n_in..][..self.n_in];
                for (dv, &w) in dx.iter_mut().zip(row) {
                    *dv += d * w;
                }
            }
        }
        dx
    }
}

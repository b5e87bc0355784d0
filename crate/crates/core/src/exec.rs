//! Data-parallel helpers.
//!
//! With the `parallel` feature the work is fanned out over rayon's global
//! pool; without it everything runs on the calling thread. Results are always
//! returned in input order, so reductions performed by callers over the
//! returned `Vec` are bit-identical between the two modes.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when the feature is compiled in, otherwise `Sequential`.
    pub fn available(self) -> Exec {
        if cfg!(feature = "parallel") {
            self
        } else {
            Exec::Sequential
        }
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match self.available() {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Send + Sync,
    {
        match self.available() {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Runs `f` on every chunk of `out` (chunk index passed along).
    pub fn for_each_chunk_mut<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        let chunk = chunk.max(1);
        match self.available() {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            }
            _ => out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        }
    }
}

/// Elementwise `acc += x`, used to reduce per-sample gradients in a fixed order.
pub fn add_assign(acc: &mut [f32], x: &[f32]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, b) in acc.iter_mut().zip(x) {
        *a += *b;
    }
}

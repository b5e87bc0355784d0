use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// A named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All parameters of one component, flat, with a name table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub values: Vec<f32>,
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialised tensor and returns its offset.
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.values.len();
        let len: usize = shape.iter().product();
        self.values.resize(offset + len, 0.0);
        self.entries.push(ParamEntry { name: name.into(), offset, shape: shape.to_vec() });
        offset
    }

    /// He-normal initialisation of `len` values at `offset`.
    pub fn init_he<R: Rng>(&mut self, offset: usize, len: usize, fan_in: usize, rng: &mut R) {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in &mut self.values[offset..offset + len] {
            *v = normal.sample(rng) as f32;
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f32> {
        vec![0.0; self.values.len()]
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entries.iter().find(|e| e.name == name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }

    /// SHA-256 of the raw parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

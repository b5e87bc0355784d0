//! Checkpoint container.
//!
//! ```text
//! "BSSLCKPT" | u32 format_version | u64 manifest_len | manifest JSON | blobs
//! ```
//!
//! Blobs are little-endian `f32`, concatenated in manifest order. All
//! integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BSSLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    ablation: AblationConfig,
    config: RunConfig,
    epochs: usize,
    seed: u64,
    blobs: Vec<BlobInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub ablation: AblationConfig,
    pub config: RunConfig,
    /// Completed pretraining epochs.
    pub epochs: usize,
    pub seed: u64,
    pub blobs: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Option<&[f32]> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            ablation: self.ablation,
            config: self.config.clone(),
            epochs: self.epochs,
            seed: self.seed,
            blobs: self.blobs.iter().map(|(n, v)| BlobInfo { name: n.clone(), len: v.len() }).collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let n_values: usize = self.blobs.iter().map(|(_, v)| v.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in &self.blobs {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20usize.saturating_add(mlen)).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let mut pos = 20 + mlen;
        let mut blobs = Vec::with_capacity(manifest.blobs.len());
        for b in &manifest.blobs {
            let end = pos + 4 * b.len;
            let raw = bytes.get(pos..end).ok_or_else(|| Error::Checkpoint(format!("blob {} truncated", b.name)))?;
            blobs.push((b.name.clone(), raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last blob"));
        }
        Ok(Self {
            config_hash: manifest.config_hash,
            ablation: manifest.ablation,
            config: manifest.config,
            epochs: manifest.epochs,
            seed: manifest.seed,
            blobs,
        })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()?).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

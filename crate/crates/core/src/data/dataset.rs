//! On-disk dataset layout.
//!
//! `manifest.tsv` holds one record per line:
//!
//! ```text
//! record_id<TAB>fold<TAB>n_leads<TAB>n_samples<TAB>sampling_rate<TAB>signal_file[<TAB>labels_json]
//! ```
//!
//! `fold` is `1..=10` or `-` when unassigned. The signal file is raw
//! little-endian `f32`, lead-major. Optional sidecars next to it:
//! `<record_id>.beats` (`sample_index<TAB>class_char` per line) and
//! `<record_id>.mask` (raw `u8`, one per sample).

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{BeatAnnotation, BeatClass, EcgRecord, SegmentationMask, Signal};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Which folds to load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Split {
    /// Every record, including those without a fold.
    All,
    Folds(BTreeSet<u8>),
}

impl Split {
    pub fn folds(folds: impl IntoIterator<Item = u8>) -> Self {
        Split::Folds(folds.into_iter().collect())
    }

    pub fn contains(&self, fold: Option<u8>) -> bool {
        match self {
            Split::All => true,
            Split::Folds(set) => fold.is_some_and(|f| set.contains(&f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub record_id: String,
    pub fold: Option<u8>,
    pub n_leads: usize,
    pub n_samples: usize,
    pub sampling_rate: f64,
    pub signal_file: String,
    pub labels: Option<BTreeSet<String>>,
}

impl ManifestEntry {
    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if !(6..=7).contains(&cols.len()) {
            return Err(Error::Integrity(format!("manifest line {lineno}: expected 6 or 7 columns, got {}", cols.len())));
        }
        let bad = |what: &str| Error::Integrity(format!("manifest line {lineno}: bad {what}"));
        let fold = match cols[1] {
            "-" | "" => None,
            s => {
                let f: u8 = s.parse().map_err(|_| bad("fold"))?;
                if !(1..=10).contains(&f) {
                    return Err(bad("fold (must be 1..10)"));
                }
                Some(f)
            }
        };
        let labels = match cols.get(6) {
            Some(json) if !json.trim().is_empty() => Some(serde_json::from_str::<BTreeSet<String>>(json)?),
            _ => None,
        };
        Ok(Self {
            record_id: cols[0].to_string(),
            fold,
            n_leads: cols[2].parse().map_err(|_| bad("n_leads"))?,
            n_samples: cols[3].parse().map_err(|_| bad("n_samples"))?,
            sampling_rate: cols[4].parse().map_err(|_| bad("sampling_rate"))?,
            signal_file: cols[5].to_string(),
            labels,
        })
    }

    fn to_line(&self) -> Result<String> {
        let fold = self.fold.map_or("-".to_string(), |f| f.to_string());
        let mut line = format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.record_id, fold, self.n_leads, self.n_samples, self.sampling_rate, self.signal_file
        );
        if let Some(labels) = &self.labels {
            line.push('\t');
            line.push_str(&serde_json::to_string(labels)?);
        }
        Ok(line)
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let entry = ManifestEntry::parse(line, i + 1)?;
        if !seen.insert(entry.record_id.clone()) {
            return Err(Error::Integrity(format!("record_id {} listed more than once", entry.record_id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Loads every record whose fold is in `split`, in manifest order.
pub fn load_dataset(root: &Path, split: &Split) -> Result<Vec<EcgRecord>> {
    load_dataset_with(root, split, Exec::default())
}

pub fn load_dataset_with(root: &Path, split: &Split, exec: Exec) -> Result<Vec<EcgRecord>> {
    let entries: Vec<ManifestEntry> = read_manifest(root)?.into_iter().filter(|e| split.contains(e.fold)).collect();
    exec.map(&entries, |e| load_record(root, e)).into_iter().collect()
}

fn load_record(root: &Path, entry: &ManifestEntry) -> Result<EcgRecord> {
    let path = root.join(&entry.signal_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.n_leads * entry.n_samples * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "{}: {} bytes on disk, manifest declares {} leads x {} samples ({} bytes)",
            path.display(),
            bytes.len(),
            entry.n_leads,
            entry.n_samples,
            expected
        )));
    }
    let data: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let signal = Signal::from_vec(entry.n_leads, entry.n_samples, data)?;
    let mut record = EcgRecord::new(entry.record_id.clone(), signal, entry.sampling_rate);
    record.fold = entry.fold;
    record.rhythm_labels = entry.labels.clone();

    let dir = path.parent().unwrap_or(root);
    let beats_path = dir.join(format!("{}.beats", entry.record_id));
    if beats_path.exists() {
        record.beats = Some(read_beats(&beats_path)?);
    }
    let mask_path = dir.join(format!("{}.mask", entry.record_id));
    if mask_path.exists() {
        let labels = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
        record.wave_mask = Some(SegmentationMask { labels });
    }
    record.validate()?;
    Ok(record)
}

fn read_beats(path: &Path) -> Result<BeatAnnotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut peaks = Vec::new();
    let mut classes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Integrity(format!("{} line {}: expected `index<TAB>class`", path.display(), i + 1));
        let (idx, class) = line.split_once('\t').ok_or_else(bad)?;
        peaks.push(idx.trim().parse::<usize>().map_err(|_| bad())?);
        let c = class.trim().chars().next().and_then(BeatClass::from_char).ok_or_else(bad)?;
        classes.push(c);
    }
    Ok(BeatAnnotation::new(peaks, classes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes `records` (signals, sidecars and manifest) under `root`.
pub fn write_dataset(root: &Path, records: &[EcgRecord]) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::new();
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(&r.record_id) {
            return Err(Error::Integrity(format!("duplicate record_id {}", r.record_id)));
        }
        let signal_file = format!("{}.f32", r.record_id);
        let bytes: Vec<u8> = r.signal.as_slice().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        write_file(&root.join(&signal_file), &bytes)?;
        if let Some(b) = &r.beats {
            let text: String =
                b.r_peaks.iter().zip(&b.classes).map(|(p, c)| format!("{p}\t{}\n", c.as_char())).collect();
            write_file(&root.join(format!("{}.beats", r.record_id)), text.as_bytes())?;
        }
        if let Some(m) = &r.wave_mask {
            write_file(&root.join(format!("{}.mask", r.record_id)), &m.labels)?;
        }
        let entry = ManifestEntry {
            record_id: r.record_id.clone(),
            fold: r.fold,
            n_leads: r.n_leads(),
            n_samples: r.n_samples(),
            sampling_rate: r.sampling_rate,
            signal_file,
            labels: r.rhythm_labels.clone(),
        };
        manifest.push_str(&entry.to_line()?);
        manifest.push('\n');
    }
    let path = root.join(MANIFEST_FILE);
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};

    fn synth_dir(n: usize) -> (tempfile::TempDir, Vec<EcgRecord>) {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = synth_generate(&SynthConfig { n_records: n, seed: 1, duration_s: 4.0, ..SynthConfig::default() })
            .unwrap();
        // f32 storage: compare against the quantised signal.
        for r in &mut recs {
            for v in r.signal.as_mut_slice() {
                *v = *v as f32 as f64;
            }
        }
        write_dataset(dir.path(), &recs).unwrap();
        (dir, recs)
    }

    #[test]
    fn fold_filter_and_round_trip() {
        let (dir, recs) = synth_dir(20);
        let nine = load_dataset(dir.path(), &Split::folds([9])).unwrap();
        assert_eq!(nine.len(), 2);
        assert!(nine.iter().all(|r| r.fold == Some(9)));
        let all = load_dataset(dir.path(), &Split::All).unwrap();
        assert_eq!(all, recs);
    }

    #[test]
    fn disjoint_splits_never_share_records() {
        let (dir, _) = synth_dir(20);
        let train: HashSet<String> =
            load_dataset(dir.path(), &Split::folds(1..=8)).unwrap().into_iter().map(|r| r.record_id).collect();
        let test: HashSet<String> =
            load_dataset(dir.path(), &Split::folds([9, 10])).unwrap().into_iter().map(|r| r.record_id).collect();
        assert_eq!(train.len(), 16);
        assert_eq!(test.len(), 4);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), &Split::All), Err(Error::Io { .. })));
    }

    #[test]
    fn duplicate_record_id_is_integrity_error() {
        let (dir, _) = synth_dir(2);
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap().to_string();
        fs::write(&path, format!("{text}{first}\n")).unwrap();
        assert!(matches!(load_dataset(dir.path(), &Split::All), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncated_signal_is_integrity_error() {
        let (dir, recs) = synth_dir(2);
        let f = dir.path().join(format!("{}.f32", recs[0].record_id));
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_dataset(dir.path(), &Split::All), Err(Error::Integrity(_))));
    }
}

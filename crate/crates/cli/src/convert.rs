//! Import of CSV-based datasets into the manifest layout.
//!
//! Expected input directory:
//!
//! ```text
//! records.csv        record_id,fold,sampling_rate,labels   (labels `;`-separated, fold may be empty)
//! <record_id>.csv    one row per sample, one column per lead, with a header row
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use beatssl_core::data::{EcgRecord, Signal};

#[derive(Debug, serde::Deserialize)]
struct IndexRow {
    record_id: String,
    fold: Option<u8>,
    sampling_rate: f64,
    #[serde(default)]
    labels: String,
}

fn read_signal(path: &Path) -> Result<Signal> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let n_leads = reader.headers()?.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n_leads];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        if rec.len() != n_leads {
            bail!("{} row {}: expected {n_leads} columns, got {}", path.display(), i + 2, rec.len());
        }
        for (lead, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().with_context(|| format!("{} row {}: bad value `{field}`", path.display(), i + 2))?;
            rows[lead].push(v);
        }
    }
    Ok(Signal::from_rows(&rows)?)
}

pub fn read_csv_dir(dir: &Path) -> Result<Vec<EcgRecord>> {
    let index = dir.join("records.csv");
    let mut reader = csv::Reader::from_path(&index).with_context(|| format!("opening {}", index.display()))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<IndexRow>() {
        let row = row.with_context(|| format!("parsing {}", index.display()))?;
        let signal = read_signal(&dir.join(format!("{}.csv", row.record_id)))?;
        let mut rec = EcgRecord::new(row.record_id, signal, row.sampling_rate);
        rec.fold = row.fold;
        let labels: BTreeSet<String> =
            row.labels.split(';').map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        rec.rhythm_labels = (!labels.is_empty()).then_some(labels);
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}
